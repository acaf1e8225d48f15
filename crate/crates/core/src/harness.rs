//! Evaluation protocols: inner cross-validation, confounded training
//! scenarios, repeated hold-out, the multi-site protocol and the
//! reproducibility metric.
//!
//! Every protocol is deterministic given its top-level seed. Independent work
//! items (repeats, resamples) get seeds from [`seeds::derive`] and run in
//! parallel; results are merged by index.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{haufe_transform, HaufeModel, RidgeModel, RidgePath};
use crate::error::{GdmError, Result};
use crate::linalg::{mean, population_variance};
use crate::model::{augment_covariates, Cohort, CovariateBasis, FeatureScaler, LabelCoding, LabelTransform, ResidualizerFit, DEFAULT_RANK_TOL};
use crate::seeds;
use crate::solver::{self, GdmHyperParams, GdmModel, GdmPath, Prediction, RoutePreference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gdm,
    Ridge,
    Haufe,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Gdm, Method::Ridge, Method::Haufe];

    pub fn id(&self) -> &'static str {
        match self {
            Method::Gdm => "gdm",
            Method::Ridge => "ridge",
            Method::Haufe => "haufe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Method {
    type Err = GdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdm" => Ok(Method::Gdm),
            "ridge" => Ok(Method::Ridge),
            "haufe" => Ok(Method::Haufe),
            other => Err(GdmError::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// λ grid. Ridge and Haufe use the `lambda1` axis only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl Default for HyperGrid {
    /// {10⁻⁵, 10⁻⁴, …, 10²} on both axes.
    fn default() -> Self {
        let axis: Vec<f64> = (-5..=2).map(|e| 10f64.powi(e)).collect();
        Self {
            lambda1: axis.clone(),
            lambda2: axis,
        }
    }
}

impl HyperGrid {
    pub fn single(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1: vec![lambda1],
            lambda2: vec![lambda2],
        }
    }

    /// Grid points for `method`, ordered by λ₂ then λ₁ ascending.
    pub fn points(&self, method: Method) -> Vec<HyperChoice> {
        let mut l1 = self.lambda1.clone();
        let mut l2 = self.lambda2.clone();
        l1.sort_by(f64::total_cmp);
        l1.dedup();
        l2.sort_by(f64::total_cmp);
        l2.dedup();
        match method {
            Method::Gdm => l2
                .iter()
                .flat_map(|&b| l1.iter().map(move |&a| HyperChoice { lambda1: a, lambda2: Some(b) }))
                .collect(),
            Method::Ridge | Method::Haufe => l1
                .iter()
                .map(|&a| HyperChoice { lambda1: a, lambda2: None })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1.is_empty() || self.lambda2.is_empty() {
            return Err(GdmError::Config("λ grid must be nonempty".into()));
        }
        for &l in &self.lambda1 {
            GdmHyperParams::new(l, 0.0).map_err(|e| GdmError::Config(e.to_string()))?;
        }
        for &l in &self.lambda2 {
            GdmHyperParams::new(1.0, l).map_err(|e| GdmError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperChoice {
    pub lambda1: f64,
    /// Absent for ridge and Haufe.
    pub lambda2: Option<f64>,
}

impl HyperChoice {
    pub fn gdm(&self) -> Result<GdmHyperParams> {
        GdmHyperParams::new(self.lambda1, self.lambda2.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub grid: HyperGrid,
    /// Inner cross-validation folds.
    pub folds: usize,
    /// Z-score features with training statistics before fitting.
    pub zscore_features: bool,
    pub rank_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: HyperGrid::default(),
            folds: 5,
            zscore_features: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// A fitted model of any method.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Gdm(GdmModel),
    Ridge(RidgeModel),
    Haufe(HaufeModel),
}

/// A fitted model plus the optional feature scaler applied before it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub choice: HyperChoice,
    pub model: FittedModel,
    pub scaler: Option<FeatureScaler>,
}

impl TrainedModel {
    pub fn predict(&self, cohort: &Cohort) -> Result<Prediction> {
        let x = match &self.scaler {
            Some(s) => s.apply(&cohort.features)?,
            None => cohort.features.clone(),
        };
        let c = augment_covariates(&cohort.covariates);
        match &self.model {
            FittedModel::Gdm(m) => m.predict(&x, &c),
            FittedModel::Ridge(m) => m.predict(&x, &c),
            FittedModel::Haufe(m) => m.predict(&x, &c),
        }
    }

    /// The parameter map the method reports: J for GDM, w for ridge, the
    /// activation pattern for Haufe.
    pub fn map(&self) -> &DVector<f64> {
        match &self.model {
            FittedModel::Gdm(m) => &m.j,
            FittedModel::Ridge(m) => &m.w,
            FittedModel::Haufe(m) => &m.pattern.a,
        }
    }

    pub fn accuracy(&self, cohort: &Cohort) -> Result<f64> {
        let pred = self.predict(cohort)?;
        accuracy(&pred.classes, &cohort.labels.as_strings())
    }
}

pub fn accuracy(predicted: &[String], truth: &[String]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(GdmError::DimensionMismatch {
            context: "accuracy",
            expected: truth.len(),
            found: predicted.len(),
        });
    }
    let correct = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}

fn prepare(train: &Cohort, options: &EvalOptions) -> Result<(DMatrix<f64>, Option<FeatureScaler>, DVector<f64>, LabelTransform, CovariateBasis)> {
    let (x, scaler) = if options.zscore_features {
        let s = FeatureScaler::fit(&train.features);
        (s.apply(&train.features)?, Some(s))
    } else {
        (train.features.clone(), None)
    };
    let (y, t) = LabelTransform::fit(&train.labels)?;
    let basis = CovariateBasis::build(&train.covariates, &train.covariate_names, options.rank_tol)?;
    Ok((x, scaler, y, t, basis))
}

/// Fit `method` with fixed hyperparameters on a training cohort.
pub fn fit_method(train: &Cohort, method: Method, choice: HyperChoice, options: &EvalOptions) -> Result<TrainedModel> {
    let (x, scaler, y, t, basis) = prepare(train, options)?;
    let model = match method {
        Method::Gdm => FittedModel::Gdm(solver::fit(&x, &y, &basis, &choice.gdm()?, &t, RoutePreference::Auto)?),
        Method::Ridge => FittedModel::Ridge(RidgeModel::fit(&x, &basis, &y, &t, choice.lambda1)?),
        Method::Haufe => FittedModel::Haufe(HaufeModel::fit(&x, &basis, &y, &t, choice.lambda1)?),
    };
    Ok(TrainedModel {
        method,
        choice,
        model,
        scaler,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: HyperChoice,
    /// Mean validation accuracy of `best`; absent when the grid had one
    /// point and nothing was fitted.
    pub best_accuracy: Option<f64>,
    pub table: Vec<(HyperChoice, f64)>,
    pub folds: usize,
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[String], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let classes: BTreeSet<&String> = labels.iter().collect();
    let mut rng = seeds::rng(seed);
    let mut out = vec![Vec::new(); folds];
    let mut offset = 0;
    for class in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| &labels[i] == class).collect();
        if idx.len() < folds {
            return Err(GdmError::Infeasible(format!(
                "class '{class}' has {} members, fewer than {folds} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            out[(pos + offset) % folds].push(i);
        }
        offset += 1;
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Inner stratified k-fold selection of hyperparameters by mean validation
/// accuracy. Ties go to the smaller λ₂, then the smaller λ₁.
///
/// When a class has fewer members than `options.folds`, the fold count is
/// reduced to the smallest class size; fewer than two per class is an error.
pub fn cross_validate(train: &Cohort, method: Method, options: &EvalOptions, seed: u64) -> Result<CvResult> {
    options.grid.validate()?;
    let points = options.grid.points(method);
    if points.len() == 1 {
        return Ok(CvResult {
            best: points[0],
            best_accuracy: None,
            table: Vec::new(),
            folds: 0,
        });
    }
    if options.folds < 2 {
        return Err(GdmError::Config("cross-validation needs at least 2 folds".into()));
    }
    let labels = train.labels.as_strings();
    let smallest = train
        .labels
        .classes()
        .iter()
        .map(|c| labels.iter().filter(|l| *l == c).count())
        .min()
        .unwrap_or(0);
    let folds = options.folds.min(smallest);
    if folds < 2 {
        return Err(GdmError::Infeasible("a class has fewer than 2 members; cannot stratify".into()));
    }
    let assignment = stratified_folds(&labels, folds, seed)?;

    let mut totals = vec![0.0; points.len()];
    for val_idx in &assignment {
        let val_set: BTreeSet<usize> = val_idx.iter().copied().collect();
        let train_idx: Vec<usize> = (0..train.n()).filter(|i| !val_set.contains(i)).collect();
        let fold_train = train.subset(&train_idx);
        let fold_val = train.subset(val_idx);
        let acc = fold_accuracies(&fold_train, &fold_val, method, &points, options)?;
        for (t, a) in totals.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let table: Vec<(HyperChoice, f64)> = points
        .iter()
        .zip(&totals)
        .map(|(p, t)| (*p, t / folds as f64))
        .collect();
    let mut best = 0;
    for (i, (_, acc)) in table.iter().enumerate() {
        if *acc > table[best].1 + 1e-12 {
            best = i;
        }
    }
    Ok(CvResult {
        best: table[best].0,
        best_accuracy: Some(table[best].1),
        table,
        folds,
    })
}

fn fold_accuracies(
    fold_train: &Cohort,
    fold_val: &Cohort,
    method: Method,
    points: &[HyperChoice],
    options: &EvalOptions,
) -> Result<Vec<f64>> {
    let (x, scaler, y, t, basis) = prepare(fold_train, options)?;
    let x_val = match &scaler {
        Some(s) => s.apply(&fold_val.features)?,
        None => fold_val.features.clone(),
    };
    let c_val = augment_covariates(&fold_val.covariates);
    let truth = fold_val.labels.as_strings();
    let score_acc = |scores: &DVector<f64>| -> Result<f64> {
        let classes: Vec<String> = scores.iter().map(|&s| t.class_of(s)).collect();
        accuracy(&classes, &truth)
    };
    match method {
        Method::Gdm => {
            let path = GdmPath::new(&x, &y, &basis)?;
            points
                .iter()
                .map(|p| {
                    let sol = path.solution(&p.gdm()?)?;
                    score_acc(&(&x_val * &sol.j + &c_val * &sol.w0))
                })
                .collect()
        }
        Method::Ridge | Method::Haufe => {
            let resid = ResidualizerFit::fit(&x, &basis)?;
            let x_res = resid.apply(&x, basis.matrix())?;
            let x_val_res = resid.apply(&x_val, &c_val)?;
            let path = RidgePath::new(&x_res, &y)?;
            points
                .iter()
                .map(|p| {
                    let w = path.weights(p.lambda1)?;
                    if method == Method::Ridge {
                        return score_acc(&(&x_val_res * w));
                    }
                    match haufe_transform(&w, &x_res) {
                        Ok(pattern) => {
                            let proj = &x_res * &pattern.a;
                            let slope = proj.dot(&y) / proj.norm_squared();
                            score_acc(&(&x_val_res * &pattern.a * slope))
                        }
                        Err(GdmError::DegeneratePattern) => Ok(0.0),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgePolicy {
    /// Patient and control mean ages matched.
    Balanced,
    /// Oldest patients and youngest controls.
    OldestPatientsYoungestControls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub case_id: u8,
    /// Fraction of the subjects left after the test draw that form the
    /// training set.
    pub train_fraction: f64,
    /// Fraction of the smaller class held out (with as many age-matched
    /// subjects of the other class) as the balanced test set.
    pub test_fraction: f64,
    /// Patient fraction of the training set.
    pub class_ratio: f64,
    pub age_policy: AgePolicy,
    /// Class treated as "patients"; defaults to the +1-coded class.
    #[serde(default)]
    pub patient_class: Option<String>,
    pub seed: u64,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.5;
pub const DEFAULT_TEST_FRACTION: f64 = 0.3;
/// Tolerated mean-age gap, in cohort age standard deviations.
pub const AGE_BALANCE_TOL: f64 = 0.25;

impl ScenarioSpec {
    /// Cases 1–4: 50/50 balanced, 25/75 balanced, 50/50 extreme ages,
    /// 25/75 extreme ages.
    pub fn case(case_id: u8, seed: u64) -> Result<Self> {
        let (class_ratio, age_policy) = match case_id {
            1 => (0.5, AgePolicy::Balanced),
            2 => (0.25, AgePolicy::Balanced),
            3 => (0.5, AgePolicy::OldestPatientsYoungestControls),
            4 => (0.25, AgePolicy::OldestPatientsYoungestControls),
            _ => return Err(GdmError::Config(format!("case must be 1–4, got {case_id}"))),
        };
        Ok(Self {
            case_id,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            test_fraction: DEFAULT_TEST_FRACTION,
            class_ratio,
            age_policy,
            patient_class: None,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let reference = Self::case(self.case_id, self.seed)?;
        if reference.class_ratio != self.class_ratio || reference.age_policy != self.age_policy {
            return Err(GdmError::Config(format!(
                "case {} requires class_ratio {} and age policy {:?}",
                self.case_id, reference.class_ratio, reference.age_policy
            )));
        }
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("test_fraction", self.test_fraction),
            ("class_ratio", self.class_ratio),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(GdmError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn age_column(cohort: &Cohort) -> Result<Vec<f64>> {
    let idx = cohort
        .covariate_index("age")
        .or_else(|| cohort.covariate_index("cov_age"))
        .ok_or_else(|| GdmError::InvalidArgument("cohort has no 'age' covariate".into()))?;
    Ok(cohort.covariates.column(idx).iter().copied().collect())
}

fn mean_of(ages: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| ages[i]).sum::<f64>() / idx.len() as f64
}

/// Swap members of `chosen` with members of `spare` until the mean age of
/// `chosen` is within `tol` of `target`.
fn match_mean(ages: &[f64], chosen: &mut [usize], spare: &mut [usize], target: f64, tol: f64) {
    let n = chosen.len() as f64;
    for _ in 0..4 * chosen.len() + 16 {
        let diff = mean_of(ages, chosen) - target;
        if diff.abs() <= tol || spare.is_empty() {
            return;
        }
        let out = (0..chosen.len())
            .max_by(|&a, &b| (diff.signum() * ages[chosen[a]]).total_cmp(&(diff.signum() * ages[chosen[b]])))
            .expect("nonempty");
        let want = ages[chosen[out]] - diff * n;
        let inn = (0..spare.len())
            .min_by(|&a, &b| (ages[spare[a]] - want).abs().total_cmp(&(ages[spare[b]] - want).abs()))
            .expect("nonempty");
        let new_diff = diff + (ages[spare[inn]] - ages[chosen[out]]) / n;
        if new_diff.abs() >= diff.abs() {
            return;
        }
        std::mem::swap(&mut chosen[out], &mut spare[inn]);
    }
}

/// Draw a training set per the scenario and a disjoint, class-balanced,
/// age-matched test set.
pub fn sample_scenario(cohort: &Cohort, spec: &ScenarioSpec) -> Result<ScenarioSplit> {
    spec.validate()?;
    let ages = age_column(cohort)?;
    let (_, transform) = LabelTransform::fit(&cohort.labels)?;
    let LabelCoding::Binary { negative, positive } = &transform.coding else {
        return Err(GdmError::InvalidArgument("scenarios need two-class labels".into()));
    };
    let patient = spec.patient_class.clone().unwrap_or_else(|| positive.clone());
    if &patient != positive && &patient != negative {
        return Err(GdmError::InvalidArgument(format!("unknown patient class '{patient}'")));
    }
    let labels = cohort.labels.as_strings();
    let mut rng = seeds::rng(spec.seed);
    let mut patients: Vec<usize> = (0..cohort.n()).filter(|&i| labels[i] == patient).collect();
    let mut controls: Vec<usize> = (0..cohort.n()).filter(|&i| labels[i] != patient).collect();
    patients.shuffle(&mut rng);
    controls.shuffle(&mut rng);
    let age_sd = population_variance(&ages).sqrt();
    let tol = AGE_BALANCE_TOL * age_sd;

    // balanced test set: greedy nearest-age pairs
    let n_pairs = (spec.test_fraction * patients.len().min(controls.len()) as f64).floor() as usize;
    if n_pairs < 2 {
        return Err(GdmError::Infeasible(format!(
            "{} patients / {} controls cannot supply a balanced test set",
            patients.len(),
            controls.len()
        )));
    }
    let mut test_p: Vec<usize> = patients[..n_pairs].to_vec();
    let mut pool_c = controls.clone();
    let mut test_c = Vec::with_capacity(n_pairs);
    for &p in &test_p {
        let best = (0..pool_c.len())
            .min_by(|&a, &b| (ages[pool_c[a]] - ages[p]).abs().total_cmp(&(ages[pool_c[b]] - ages[p]).abs()))
            .expect("controls remain");
        test_c.push(pool_c.swap_remove(best));
    }
    let mut pool_p: Vec<usize> = patients[n_pairs..].to_vec();
    let target = mean_of(&ages, &test_p);
    match_mean(&ages, &mut test_c, &mut pool_c, target, tol);
    if (mean_of(&ages, &test_c) - mean_of(&ages, &test_p)).abs() > tol {
        return Err(GdmError::Infeasible("could not age-match the test set".into()));
    }

    // training set from what remains
    let available = pool_p.len() + pool_c.len();
    let mut total = (spec.train_fraction * available as f64).floor() as usize;
    let mut n_p = (spec.class_ratio * total as f64).round() as usize;
    if n_p > pool_p.len() {
        total = (pool_p.len() as f64 / spec.class_ratio).floor() as usize;
        n_p = (spec.class_ratio * total as f64).round() as usize;
    }
    let mut n_c = total - n_p;
    if n_c > pool_c.len() {
        total = (pool_c.len() as f64 / (1.0 - spec.class_ratio)).floor() as usize;
        n_p = (spec.class_ratio * total as f64).round() as usize;
        n_c = total - n_p;
    }
    if n_p < 2 || n_c < 2 || n_p > pool_p.len() || n_c > pool_c.len() {
        return Err(GdmError::Infeasible(format!(
            "cannot draw a {:.0}/{:.0} training set from {} patients and {} controls",
            100.0 * spec.class_ratio,
            100.0 * (1.0 - spec.class_ratio),
            pool_p.len(),
            pool_c.len()
        )));
    }

    let (train_p, train_c) = match spec.age_policy {
        AgePolicy::Balanced => {
            let train_p: Vec<usize> = pool_p[..n_p].to_vec();
            let mut train_c: Vec<usize> = pool_c[..n_c].to_vec();
            let mut spare: Vec<usize> = pool_c[n_c..].to_vec();
            match_mean(&ages, &mut train_c, &mut spare, mean_of(&ages, &train_p), tol);
            if (mean_of(&ages, &train_c) - mean_of(&ages, &train_p)).abs() > tol {
                return Err(GdmError::Infeasible("could not age-match the training set".into()));
            }
            (train_p, train_c)
        }
        AgePolicy::OldestPatientsYoungestControls => {
            pool_p.sort_by(|&a, &b| ages[b].total_cmp(&ages[a]).then(a.cmp(&b)));
            pool_c.sort_by(|&a, &b| ages[a].total_cmp(&ages[b]).then(a.cmp(&b)));
            (pool_p[..n_p].to_vec(), pool_c[..n_c].to_vec())
        }
    };

    let mut train: Vec<usize> = train_p.into_iter().chain(train_c).collect();
    let mut test: Vec<usize> = test_p.drain(..).chain(test_c).collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok(ScenarioSplit { train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproStats {
    pub cosines: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// All pairwise cosine similarities between parameter vectors.
pub fn reproducibility(vectors: &[DVector<f64>]) -> Result<ReproStats> {
    if vectors.len() < 2 {
        return Err(GdmError::InvalidArgument("need at least two parameter vectors".into()));
    }
    let d = vectors[0].len();
    let mut norms = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.len() != d {
            return Err(GdmError::DimensionMismatch {
                context: "reproducibility vectors",
                expected: d,
                found: v.len(),
            });
        }
        let nrm = v.norm();
        if !(nrm > 0.0) {
            return Err(GdmError::InvalidArgument("zero-norm parameter vector".into()));
        }
        norms.push(nrm);
    }
    let mut cosines = Vec::with_capacity(vectors.len() * (vectors.len() - 1) / 2);
    for a in 0..vectors.len() {
        for b in a + 1..vectors.len() {
            let c = vectors[a].dot(&vectors[b]) / (norms[a] * norms[b]);
            cosines.push(c.clamp(-1.0, 1.0));
        }
    }
    let m = mean(&cosines);
    let sd = population_variance(&cosines).sqrt();
    Ok(ReproStats { cosines, mean: m, std: sd })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_reproducibility: f64,
    pub std_reproducibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub protocol: String,
    pub case_id: Option<u8>,
    pub train_site: Option<String>,
    pub test_site: Option<String>,
    pub seed: u64,
    pub repeats: usize,
    pub folds: usize,
    pub selection_criterion: String,
    pub feature_zscore: bool,
    pub haufe_covariance: String,
}

impl ReportMetadata {
    fn new(protocol: &str, seed: u64, repeats: usize, options: &EvalOptions) -> Self {
        Self {
            protocol: protocol.into(),
            case_id: None,
            train_site: None,
            test_site: None,
            seed,
            repeats,
            folds: options.folds,
            selection_criterion: "mean validation accuracy".into(),
            feature_zscore: options.zscore_features,
            haufe_covariance: "empirical, centered, 1/n".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method_id: String,
    pub per_repeat_accuracy: Vec<f64>,
    pub pairwise_reproducibility: Vec<f64>,
    pub chosen_hyperparams: Vec<HyperChoice>,
    pub summary: ReportSummary,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    fn assemble(method: Method, accuracies: Vec<f64>, maps: &[DVector<f64>], chosen: Vec<HyperChoice>, metadata: ReportMetadata) -> Result<Self> {
        let repro = reproducibility(maps)?;
        Ok(Self {
            method_id: method.id().into(),
            summary: ReportSummary {
                mean_accuracy: mean(&accuracies),
                std_accuracy: population_variance(&accuracies).sqrt(),
                mean_reproducibility: repro.mean,
                std_reproducibility: repro.std,
            },
            per_repeat_accuracy: accuracies,
            pairwise_reproducibility: repro.cosines,
            chosen_hyperparams: chosen,
            metadata,
        })
    }
}

/// Outcome of one method on one repeat.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub choice: HyperChoice,
    pub accuracy: f64,
    pub map: DVector<f64>,
}

/// One scenario draw: sample, cross-validate, fit and test every method.
pub fn run_repeat(cohort: &Cohort, spec: &ScenarioSpec, methods: &[Method], repeat_seed: u64, options: &EvalOptions) -> Result<Vec<MethodOutcome>> {
    let spec = ScenarioSpec {
        seed: seeds::derive(repeat_seed, 0),
        ..spec.clone()
    };
    let split = sample_scenario(cohort, &spec)?;
    let train = cohort.subset(&split.train);
    let test = cohort.subset(&split.test);
    let cv_seed = seeds::derive(repeat_seed, 1);
    methods
        .iter()
        .map(|&m| {
            let cv = cross_validate(&train, m, options, cv_seed)?;
            let model = fit_method(&train, m, cv.best, options)?;
            Ok(MethodOutcome {
                method: m,
                choice: cv.best,
                accuracy: model.accuracy(&test)?,
                map: model.map().clone(),
            })
        })
        .collect()
}

/// Combine per-repeat outcomes (indexed by repeat, then method) into one
/// report per method.
pub fn assemble_reports(outcomes: &[Vec<MethodOutcome>], methods: &[Method], metadata: &ReportMetadata) -> Result<Vec<EvalReport>> {
    methods
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let acc = outcomes.iter().map(|o| o[mi].accuracy).collect();
            let maps: Vec<DVector<f64>> = outcomes.iter().map(|o| o[mi].map.clone()).collect();
            let chosen = outcomes.iter().map(|o| o[mi].choice).collect();
            EvalReport::assemble(m, acc, &maps, chosen, metadata.clone())
        })
        .collect()
}

/// Repeat the scenario `repeats` times; one report per method.
pub fn repeated_holdout(
    cohort: &Cohort,
    spec: &ScenarioSpec,
    methods: &[Method],
    repeats: usize,
    seed: u64,
    options: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    if repeats < 2 {
        return Err(GdmError::Config("repeated hold-out needs at least 2 repeats".into()));
    }
    spec.validate()?;
    let outcomes: Vec<Vec<MethodOutcome>> = (0..repeats)
        .into_par_iter()
        .map(|r| run_repeat(cohort, spec, methods, seeds::derive(seed, r as u64), options))
        .collect::<Result<_>>()?;
    let mut meta = ReportMetadata::new("scenario", seed, repeats, options);
    meta.case_id = Some(spec.case_id);
    assemble_reports(&outcomes, methods, &meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSiteEntry {
    pub train_site: String,
    pub test_site: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSiteReport {
    pub sites: Vec<String>,
    pub train_fraction: f64,
    pub entries: Vec<CrossSiteEntry>,
}

impl MultiSiteReport {
    pub fn entry(&self, train: &str, test: &str, method: Method) -> Option<&CrossSiteEntry> {
        self.entries
            .iter()
            .find(|e| e.train_site == train && e.test_site == test && e.report.method_id == method.id())
    }
}

/// Every site must carry exactly the cohort's two classes so that one label
/// coding applies everywhere.
pub fn check_site_coding(cohort: &Cohort) -> Result<LabelTransform> {
    let (_, global) = LabelTransform::fit(&cohort.labels)?;
    for site in cohort.sites() {
        let idx = cohort.site_indices(&site);
        let labels = cohort.labels.subset(&idx);
        let (_, site_transform) = LabelTransform::fit(&labels).map_err(|e| GdmError::LabelCoding {
            site: site.clone(),
            detail: e.to_string(),
        })?;
        if site_transform.coding != global.coding {
            return Err(GdmError::LabelCoding {
                site,
                detail: format!("coding {:?} differs from cohort coding {:?}", site_transform.coding, global.coding),
            });
        }
    }
    Ok(global)
}

/// Stratified subsample of `fraction` of each class.
fn stratified_resample(cohort: &Cohort, idx: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let labels = cohort.labels.as_strings();
    let mut rng = seeds::rng(seed);
    let classes: BTreeSet<&String> = idx.iter().map(|&i| &labels[i]).collect();
    let mut out = Vec::new();
    for class in classes {
        let mut members: Vec<usize> = idx.iter().copied().filter(|&i| &labels[i] == class).collect();
        members.shuffle(&mut rng);
        let take = ((fraction * members.len() as f64).floor() as usize).max(2).min(members.len());
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    out
}

/// Train on a resampled fraction of one site, test on every other site in
/// full; repeated `resamples` times per training site.
pub fn multi_site_protocol(
    cohort: &Cohort,
    methods: &[Method],
    resamples: usize,
    train_fraction: f64,
    seed: u64,
    options: &EvalOptions,
) -> Result<MultiSiteReport> {
    if cohort.site.is_none() || cohort.sites().len() < 2 {
        return Err(GdmError::InvalidArgument("multi-site protocol needs at least two sites".into()));
    }
    if resamples < 2 {
        return Err(GdmError::Config("multi-site protocol needs at least 2 resamples".into()));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(GdmError::Config("train_fraction must lie in (0, 1]".into()));
    }
    check_site_coding(cohort)?;
    let sites = cohort.sites();
    let site_cohorts: Vec<Cohort> = sites.iter().map(|s| cohort.subset(&cohort.site_indices(s))).collect();

    let mut entries = Vec::new();
    for (ti, train_site) in sites.iter().enumerate() {
        let site_idx = cohort.site_indices(train_site);
        let site_seed = seeds::derive(seed, ti as u64);
        // outcomes[r][m] = (choice, accuracies per site, map)
        let outcomes: Vec<Vec<(HyperChoice, Vec<f64>, DVector<f64>)>> = (0..resamples)
            .into_par_iter()
            .map(|r| {
                let rs = seeds::derive(site_seed, r as u64);
                let train = cohort.subset(&stratified_resample(cohort, &site_idx, train_fraction, seeds::derive(rs, 0)));
                methods
                    .iter()
                    .map(|&m| {
                        let cv = cross_validate(&train, m, options, seeds::derive(rs, 1))?;
                        let model = fit_method(&train, m, cv.best, options)?;
                        let acc = site_cohorts
                            .iter()
                            .enumerate()
                            .map(|(si, sc)| if si == ti { Ok(f64::NAN) } else { model.accuracy(sc) })
                            .collect::<Result<Vec<f64>>>()?;
                        Ok((cv.best, acc, model.map().clone()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        for (si, test_site) in sites.iter().enumerate() {
            if si == ti {
                continue;
            }
            for (mi, &m) in methods.iter().enumerate() {
                let acc: Vec<f64> = outcomes.iter().map(|o| o[mi].1[si]).collect();
                let maps: Vec<DVector<f64>> = outcomes.iter().map(|o| o[mi].2.clone()).collect();
                let chosen = outcomes.iter().map(|o| o[mi].0).collect();
                let mut meta = ReportMetadata::new("multisite", seed, resamples, options);
                meta.train_site = Some(train_site.clone());
                meta.test_site = Some(test_site.clone());
                entries.push(CrossSiteEntry {
                    train_site: train_site.clone(),
                    test_site: test_site.clone(),
                    report: EvalReport::assemble(m, acc, &maps, chosen, meta)?,
                });
            }
        }
    }
    Ok(MultiSiteReport {
        sites,
        train_fraction,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Labels;
    use crate::synth::{generate, EffectPattern, GeneratorSpec};

    fn cohort(n: usize, amp: f64, seed: u64) -> Cohort {
        generate(&GeneratorSpec {
            n_per_site: vec![n],
            d: 20,
            effect_pattern: EffectPattern::Sparse { count: 5 },
            effect_amplitude: amp,
            seed,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn default_grid_has_eight_points_per_axis() {
        let g = HyperGrid::default();
        assert_eq!(g.lambda1.len(), 8);
        assert_eq!(g.lambda1[0], 1e-5);
        assert_eq!(g.lambda2[7], 1e2);
        assert_eq!(g.points(Method::Gdm).len(), 64);
        assert_eq!(g.points(Method::Ridge).len(), 8);
    }

    #[test]
    fn reproducibility_basics() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let r = reproducibility(&[v.clone(), v.clone(), v.clone() * 3.0]).unwrap();
        assert!(r.cosines.iter().all(|c| (c - 1.0).abs() < 1e-15));
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 2.0]);
        assert_eq!(reproducibility(&[a.clone(), b]).unwrap().cosines, vec![0.0]);
        assert!(reproducibility(&[a.clone(), DVector::zeros(2)]).is_err());
        assert!(reproducibility(&[a]).is_err());
    }

    #[test]
    fn single_point_grid_skips_fitting() {
        // two subjects per class could never fill five folds
        let c = cohort(4, 1.0, 1);
        let opts = EvalOptions {
            grid: HyperGrid::single(0.1, 1.0),
            ..Default::default()
        };
        let r = cross_validate(&c, Method::Gdm, &opts, 0).unwrap();
        assert_eq!(r.folds, 0);
        assert_eq!(r.best, HyperChoice { lambda1: 0.1, lambda2: Some(1.0) });
        assert_eq!(r.best_accuracy, None);
    }

    #[test]
    fn ties_prefer_smaller_lambdas() {
        // noiseless separable data: every grid point is perfect
        let (c, _) = generate(&GeneratorSpec {
            n_per_site: vec![40],
            d: 10,
            effect_pattern: EffectPattern::Sparse { count: 3 },
            effect_amplitude: 1.0,
            noise_std: 0.0,
            ..Default::default()
        })
        .unwrap();
        let opts = EvalOptions {
            grid: HyperGrid {
                lambda1: vec![10.0, 1.0],
                lambda2: vec![5.0, 0.5],
            },
            ..Default::default()
        };
        let r = cross_validate(&c, Method::Gdm, &opts, 3).unwrap();
        assert_eq!(r.best_accuracy, Some(1.0));
        assert_eq!(r.best, HyperChoice { lambda1: 1.0, lambda2: Some(0.5) });
    }

    #[test]
    fn separable_data_reaches_perfect_inner_accuracy() {
        let c = cohort(60, 3.0, 2);
        for m in Method::ALL {
            let r = cross_validate(&c, m, &EvalOptions::default(), 9).unwrap();
            assert_eq!(r.best_accuracy, Some(1.0), "{m}");
        }
    }

    #[test]
    fn stratified_folds_cover_everything_once() {
        let labels: Vec<String> = (0..23).map(|i| if i % 3 == 0 { "a".into() } else { "b".into() }).collect();
        let folds = stratified_folds(&labels, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &folds {
            assert!(f.iter().any(|&i| labels[i] == "a") && f.iter().any(|&i| labels[i] == "b"));
        }
    }

    #[test]
    fn case_one_is_balanced() {
        let c = cohort(400, 0.5, 3);
        let ages: Vec<f64> = c.covariates.column(0).iter().copied().collect();
        let sd = population_variance(&ages).sqrt();
        let labels = c.labels.as_strings();
        for seed in 0..10 {
            let split = sample_scenario(&c, &ScenarioSpec::case(1, seed).unwrap()).unwrap();
            let p: Vec<usize> = split.train.iter().copied().filter(|&i| labels[i] == "patient").collect();
            let q: Vec<usize> = split.train.iter().copied().filter(|&i| labels[i] == "control").collect();
            assert!((p.len() as i64 - q.len() as i64).abs() <= 1);
            assert!((mean_of(&ages, &p) - mean_of(&ages, &q)).abs() < 0.25 * sd);
            let tp = split.test.iter().filter(|&&i| labels[i] == "patient").count();
            assert_eq!(2 * tp, split.test.len());
            assert!(split.train.iter().all(|i| !split.test.contains(i)));
        }
    }

    #[test]
    fn case_three_separates_ages() {
        let c = cohort(400, 0.5, 4);
        let labels = c.labels.as_strings();
        let split = sample_scenario(&c, &ScenarioSpec::case(3, 1).unwrap()).unwrap();
        let ages: Vec<f64> = c.covariates.column(0).iter().copied().collect();
        let p: Vec<usize> = split.train.iter().copied().filter(|&i| labels[i] == "patient").collect();
        let q: Vec<usize> = split.train.iter().copied().filter(|&i| labels[i] == "control").collect();
        // uniform ages: the two halves of the pool sit roughly a half range apart
        let gap = mean_of(&ages, &p) - mean_of(&ages, &q);
        assert!(gap > 0.4 * (crate::synth::AGE_MAX - crate::synth::AGE_MIN), "gap {gap}");
        let oldest_patients_left = (0..c.n())
            .filter(|i| labels[*i] == "patient" && !split.train.contains(i) && !split.test.contains(i))
            .map(|i| ages[i])
            .fold(0.0, f64::max);
        let youngest_train_patient = p.iter().map(|&i| ages[i]).fold(f64::INFINITY, f64::min);
        assert!(youngest_train_patient >= oldest_patients_left);
    }

    #[test]
    fn case_four_ratio() {
        let c = cohort(400, 0.5, 5);
        let labels = c.labels.as_strings();
        let split = sample_scenario(&c, &ScenarioSpec::case(4, 2).unwrap()).unwrap();
        let np = split.train.iter().filter(|&&i| labels[i] == "patient").count() as f64;
        let ratio = np / split.train.len() as f64;
        assert!((ratio - 0.25).abs() <= 1.0 / split.train.len() as f64);
    }

    #[test]
    fn too_few_patients_is_infeasible() {
        let mut c = cohort(40, 0.5, 6);
        let Labels::Categorical(l) = &mut c.labels else { unreachable!() };
        let mut seen = 0;
        for v in l.iter_mut() {
            if v == "patient" {
                seen += 1;
                if seen > 3 {
                    *v = "control".into();
                }
            }
        }
        let err = sample_scenario(&c, &ScenarioSpec::case(2, 0).unwrap()).unwrap_err();
        assert!(matches!(err, GdmError::Infeasible(_)));
    }

    #[test]
    fn identical_repeats_are_identical() {
        let c = cohort(200, 0.6, 7);
        let opts = EvalOptions {
            grid: HyperGrid {
                lambda1: vec![0.01, 1.0],
                lambda2: vec![0.01, 1.0],
            },
            ..Default::default()
        };
        let spec = ScenarioSpec::case(1, 0).unwrap();
        let a = run_repeat(&c, &spec, &Method::ALL, 11, &opts).unwrap();
        let b = run_repeat(&c, &spec, &Method::ALL, 11, &opts).unwrap();
        let meta = ReportMetadata::new("scenario", 11, 2, &opts);
        let reports = assemble_reports(&[a, b], &Method::ALL, &meta).unwrap();
        for r in reports {
            assert_eq!(r.per_repeat_accuracy[0], r.per_repeat_accuracy[1]);
            assert!((r.pairwise_reproducibility[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_labels_are_at_chance() {
        let c = cohort(400, 0.0, 8);
        let opts = EvalOptions {
            grid: HyperGrid {
                lambda1: vec![1e-3, 1.0],
                lambda2: vec![1e-3, 1.0],
            },
            ..Default::default()
        };
        let reports = repeated_holdout(&c, &ScenarioSpec::case(1, 0).unwrap(), &[Method::Gdm, Method::Ridge], 10, 1, &opts).unwrap();
        for r in reports {
            assert!(r.summary.mean_accuracy > 0.4 && r.summary.mean_accuracy < 0.6, "{}", r.summary.mean_accuracy);
        }
    }

    #[test]
    fn mismatched_site_labels_are_rejected() {
        let (mut c, _) = generate(&GeneratorSpec {
            n_per_site: vec![20, 20],
            d: 5,
            effect_pattern: EffectPattern::Sparse { count: 2 },
            ..Default::default()
        })
        .unwrap();
        let sites = c.site.clone().unwrap();
        let Labels::Categorical(l) = &mut c.labels else { unreachable!() };
        for (v, s) in l.iter_mut().zip(&sites) {
            if s == "site2" {
                *v = if v == "patient" { "CASE".into() } else { "CTRL".into() };
            }
        }
        assert!(check_site_coding(&c).is_err());
    }
}
