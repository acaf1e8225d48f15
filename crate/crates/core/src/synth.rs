//! Synthetic two-group cohorts with known ground truth.
//!
//! Each subject gets a group `g ∈ {−1, +1}`, an age, a sex and a site, and
//! features `g·β_true + (age − 72.5)·β_age + offset_site + noise`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GdmError, Result};
use crate::model::{Cohort, Labels};
use crate::seeds;

pub const PATIENT: &str = "patient";
pub const CONTROL: &str = "control";
pub const AGE_MIN: f64 = 55.0;
pub const AGE_MAX: f64 = 90.0;
const AGE_CENTER: f64 = 0.5 * (AGE_MIN + AGE_MAX);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectPattern {
    /// `count` randomly placed features with ±amplitude.
    Sparse { count: usize },
    /// A contiguous block of `width` features with a raised-cosine profile.
    Smooth { width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_per_site: Vec<usize>,
    #[serde(default = "default_d")]
    pub d: usize,
    pub effect_pattern: EffectPattern,
    pub effect_amplitude: f64,
    /// Per-year age slope scale; each feature's slope is N(0, amplitude²).
    pub age_effect_amplitude: f64,
    /// Difference in mean age between patients and controls (years).
    pub age_group_coupling: f64,
    /// Per-site, per-feature offsets are N(0, amplitude²).
    pub site_offsets_amplitude: f64,
    pub noise_std: f64,
    /// Correlation between neighbouring features' noise (AR(1)).
    #[serde(default)]
    pub noise_correlation: f64,
    pub seed: u64,
}

fn default_d() -> usize {
    151
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_per_site: vec![200],
            d: default_d(),
            effect_pattern: EffectPattern::Sparse { count: 15 },
            effect_amplitude: 0.5,
            age_effect_amplitude: 0.0,
            age_group_coupling: 0.0,
            site_offsets_amplitude: 0.0,
            noise_std: 1.0,
            noise_correlation: 0.0,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GdmError::InvalidArgument(m));
        if self.d < 1 {
            return bad("d must be at least 1".into());
        }
        if self.n_per_site.is_empty() || self.n_per_site.iter().any(|&n| n < 4) {
            return bad("every site needs at least 4 subjects".into());
        }
        for (name, v) in [
            ("effect_amplitude", self.effect_amplitude),
            ("age_effect_amplitude", self.age_effect_amplitude),
            ("age_group_coupling", self.age_group_coupling),
            ("site_offsets_amplitude", self.site_offsets_amplitude),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.noise_correlation.abs() < 1.0) {
            return bad("noise_correlation must lie in (−1, 1)".into());
        }
        match self.effect_pattern {
            EffectPattern::Sparse { count } if count > self.d => bad("sparse count exceeds d".into()),
            EffectPattern::Smooth { width } if width > self.d || width == 0 => {
                bad("smooth width must be in 1..=d".into())
            }
            _ => Ok(()),
        }
    }
}

/// What the generator actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_true: Vec<f64>,
    pub beta_age: Vec<f64>,
    /// One offset vector per site.
    pub site_offsets: Vec<Vec<f64>>,
    /// `beta_true != 0`.
    pub associated: Vec<bool>,
}

impl GroundTruth {
    /// (precision, recall) of a rejection set against the associated flags.
    /// Precision of an empty set is reported as 1.
    pub fn precision_recall(&self, rejected: &[bool]) -> (f64, f64) {
        let tp = rejected.iter().zip(&self.associated).filter(|(r, a)| **r && **a).count() as f64;
        let n_rej = rejected.iter().filter(|r| **r).count() as f64;
        let n_true = self.associated.iter().filter(|a| **a).count() as f64;
        let precision = if n_rej == 0.0 { 1.0 } else { tp / n_rej };
        let recall = if n_true == 0.0 { 1.0 } else { tp / n_true };
        (precision, recall)
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.associated.len()).filter(|&i| self.associated[i]).collect()
    }
}

/// Names of the bundled generator specs.
pub const STANDARD_SPECS: [&str; 3] = ["confounded", "confounded_multisite", "null"];

/// A bundled generator spec: `confounded` (one site of 415 subjects with
/// age-coupled groups), `confounded_multisite` (the same design over three
/// sites of 236, 286 and 331 subjects with per-site offsets) or `null` (no
/// group effect, d = 500).
pub fn standard_spec(name: &str) -> Result<GeneratorSpec> {
    let text = match name {
        "confounded" => include_str!("../data/confounded.json"),
        "confounded_multisite" => include_str!("../data/confounded_multisite.json"),
        "null" => include_str!("../data/null.json"),
        other => {
            return Err(GdmError::Config(format!(
                "unknown standard spec '{other}' (expected one of {})",
                STANDARD_SPECS.join(", ")
            )))
        }
    };
    let spec: GeneratorSpec = serde_json::from_str(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn site_name(i: usize) -> String {
    format!("site{}", i + 1)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(spec: &GeneratorSpec) -> Result<(Cohort, GroundTruth)> {
    spec.validate()?;
    let d = spec.d;
    // independent streams so that changing one component leaves the others fixed
    let mut pattern_rng = seeds::rng(seeds::derive(spec.seed, 0));
    let mut age_rng = seeds::rng(seeds::derive(spec.seed, 1));
    let mut site_rng = seeds::rng(seeds::derive(spec.seed, 2));

    let mut beta_true = vec![0.0; d];
    match spec.effect_pattern {
        EffectPattern::Sparse { count } => {
            let mut idx: Vec<usize> = (0..d).collect();
            idx.shuffle(&mut pattern_rng);
            for &i in idx.iter().take(count) {
                let sign = if pattern_rng.random::<bool>() { 1.0 } else { -1.0 };
                beta_true[i] = sign * spec.effect_amplitude;
            }
        }
        EffectPattern::Smooth { width } => {
            let start = pattern_rng.random_range(0..=d - width);
            for t in 0..width {
                let phase = (t as f64 + 0.5) / width as f64;
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * phase).cos();
                beta_true[start + t] = spec.effect_amplitude * w;
            }
        }
    }
    let beta_age: Vec<f64> = (0..d)
        .map(|_| spec.age_effect_amplitude * normal(&mut age_rng))
        .collect();
    let site_offsets: Vec<Vec<f64>> = spec
        .n_per_site
        .iter()
        .map(|_| {
            (0..d)
                .map(|_| spec.site_offsets_amplitude * normal(&mut site_rng))
                .collect()
        })
        .collect();

    let n: usize = spec.n_per_site.iter().sum();
    let mut features = DMatrix::zeros(n, d);
    let mut covariates = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    let mut sites = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let rho = spec.noise_correlation;
    let innovation = (1.0 - rho * rho).sqrt();

    let mut row = 0;
    for (s, &ns) in spec.n_per_site.iter().enumerate() {
        let mut rng = seeds::rng(seeds::derive(spec.seed, 100 + s as u64));
        let mut groups: Vec<f64> = (0..ns).map(|i| if i < ns / 2 { 1.0 } else { -1.0 }).collect();
        groups.shuffle(&mut rng);
        for (i, &g) in groups.iter().enumerate() {
            let age = rng.random_range(AGE_MIN..AGE_MAX) + g * 0.5 * spec.age_group_coupling;
            let sex = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let mut prev: f64 = StandardNormal.sample(&mut rng);
            for j in 0..d {
                let e: f64 = if j == 0 {
                    prev
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    prev = rho * prev + innovation * z;
                    prev
                };
                features[(row, j)] =
                    g * beta_true[j] + (age - AGE_CENTER) * beta_age[j] + site_offsets[s][j] + spec.noise_std * e;
            }
            covariates[(row, 0)] = age;
            covariates[(row, 1)] = sex;
            labels.push(if g > 0.0 { PATIENT } else { CONTROL }.to_string());
            sites.push(site_name(s));
            ids.push(format!("{}_{:04}", site_name(s), i));
            row += 1;
        }
    }

    let cohort = Cohort::new(
        features,
        Labels::Categorical(labels),
        covariates,
        vec!["age".into(), "sex".into()],
        if spec.n_per_site.len() > 1 { Some(sites) } else { None },
        (0..d).map(|j| format!("roi_{:03}", j + 1)).collect(),
        ids,
    )?;
    let associated = beta_true.iter().map(|b| *b != 0.0).collect();
    Ok((
        cohort,
        GroundTruth {
            beta_true,
            beta_age,
            site_offsets,
            associated,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let spec = GeneratorSpec {
            n_per_site: vec![20, 30],
            d: 12,
            effect_pattern: EffectPattern::Sparse { count: 3 },
            site_offsets_amplitude: 1.0,
            age_effect_amplitude: 0.1,
            seed: 5,
            ..Default::default()
        };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&GeneratorSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn noiseless_features_are_the_pattern() {
        let spec = GeneratorSpec {
            n_per_site: vec![10],
            d: 6,
            effect_pattern: EffectPattern::Sparse { count: 2 },
            effect_amplitude: 1.0,
            noise_std: 0.0,
            ..Default::default()
        };
        let (c, t) = generate(&spec).unwrap();
        for r in 0..c.n() {
            let g = match &c.labels {
                Labels::Categorical(v) if v[r] == PATIENT => 1.0,
                _ => -1.0,
            };
            for j in 0..6 {
                assert_eq!(c.features[(r, j)], g * t.beta_true[j]);
            }
        }
        assert_eq!(t.support().len(), 2);
    }

    #[test]
    fn groups_balanced_and_age_shifted() {
        let spec = GeneratorSpec {
            n_per_site: vec![2000],
            d: 3,
            effect_pattern: EffectPattern::Sparse { count: 1 },
            age_group_coupling: 10.0,
            ..Default::default()
        };
        let (c, _) = generate(&spec).unwrap();
        let Labels::Categorical(l) = &c.labels else { unreachable!() };
        let pat: Vec<usize> = (0..c.n()).filter(|&i| l[i] == PATIENT).collect();
        let con: Vec<usize> = (0..c.n()).filter(|&i| l[i] == CONTROL).collect();
        assert_eq!(pat.len(), 1000);
        let mean_age = |ix: &[usize]| ix.iter().map(|&i| c.covariates[(i, 0)]).sum::<f64>() / ix.len() as f64;
        let diff = mean_age(&pat) - mean_age(&con);
        assert!((diff - 10.0).abs() < 1.0, "age gap {diff}");
    }

    #[test]
    fn smooth_pattern_is_contiguous() {
        let spec = GeneratorSpec {
            d: 40,
            effect_pattern: EffectPattern::Smooth { width: 8 },
            ..Default::default()
        };
        let (_, t) = generate(&spec).unwrap();
        let s = t.support();
        assert_eq!(s.len(), 8);
        assert_eq!(s[7] - s[0], 7);
    }

    #[test]
    fn precision_recall_counts() {
        let t = GroundTruth {
            beta_true: vec![1.0, 0.0, 1.0, 0.0],
            beta_age: vec![0.0; 4],
            site_offsets: vec![],
            associated: vec![true, false, true, false],
        };
        assert_eq!(t.precision_recall(&[true, true, false, false]), (0.5, 0.5));
        assert_eq!(t.precision_recall(&[false; 4]), (1.0, 0.0));
    }

    #[test]
    fn bundled_specs_parse() {
        for name in STANDARD_SPECS {
            standard_spec(name).unwrap();
        }
        assert!(standard_spec("nope").is_err());
        assert_eq!(standard_spec("confounded_multisite").unwrap().n_per_site.len(), 3);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&GeneratorSpec {
            n_per_site: vec![3],
            ..Default::default()
        })
        .is_err());
        assert!(generate(&GeneratorSpec {
            noise_std: -1.0,
            ..Default::default()
        })
        .is_err());
    }
}
