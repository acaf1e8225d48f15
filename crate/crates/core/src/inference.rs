//! Permutation-free inference on GDM patterns.
//!
//! The fitted pattern is `J = Q·Y` for a d × n matrix `Q` that depends on the
//! labels only through the scalar `s = 1 + λ₂YᵀRY`. For zero-mean,
//! unit-variance labels this gives each `J_i` a null distribution with mean
//! zero and variance `Σ_j Q_ij²` under relabeling, from which two-sided
//! Gaussian p-values follow. Permutation p-values (full refit or fixed `Q`)
//! serve as the reference.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{check_dims, GdmError, Result};
use crate::model::CovariateBasis;
use crate::seeds;
use crate::solver::{solve, DualSystem, GdmHyperParams, RoutePreference};

/// Relative tolerance when comparing permuted statistics to the observed one.
pub const TIE_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    /// d × n.
    pub q: DMatrix<f64>,
    /// `1 + λ₂(YᵀY − YᵀC(CᵀC)⁻¹CᵀY)`.
    pub scalar_s: f64,
    pub hyper: GdmHyperParams,
    /// FNV-1a digest of the `(X, Y, C)` bits the matrix was built from.
    pub fingerprint: u64,
}

impl QMatrix {
    pub fn apply(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("Q matrix columns", self.q.ncols(), y.len())?;
        Ok(&self.q * y)
    }
}

pub fn fingerprint<'a>(parts: impl IntoIterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in parts {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Assemble `Q` term by term from the dual system:
///
/// ```text
/// Q = [λ₂Xᵀ − λ₂XᵀP − Xᵀ·B·(I + λ₂(XXᵀP − XXᵀ)/s)] / s
/// ```
///
/// where `B` is the upper-left n × n block of `M⁻¹`.
pub fn build_q_matrix(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
) -> Result<QMatrix> {
    let sys = DualSystem::build(x, y, basis, hyper)?;
    let s = sys.s;
    if !(s > 0.0) {
        return Err(GdmError::InvalidArgument(format!("generative scalar s = {s} must be positive")));
    }
    let l2 = hyper.lambda2;
    let label_op = sys.label_operator(basis)?;
    let block = sys.apply_inverse_block(&label_op)?;
    let xt_p = basis.project(x)?.transpose();
    let q = (x.transpose() * l2 - xt_p * l2 - x.tr_mul(&block)) / s;
    Ok(QMatrix {
        q,
        scalar_s: s,
        hyper: *hyper,
        fingerprint: fingerprint(x.iter().chain(y.iter()).chain(basis.matrix().iter())),
    })
}

/// Per-feature null standard deviations; the null mean is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpec {
    pub sigma: DVector<f64>,
}

impl NullSpec {
    /// Row-wise root sum of squares.
    pub fn from_q(q: &DMatrix<f64>) -> Self {
        Self {
            sigma: DVector::from_iterator(q.nrows(), q.row_iter().map(|r| r.norm())),
        }
    }

    pub fn mean(&self) -> f64 {
        0.0
    }
}

pub fn analytic_null(q: &QMatrix) -> NullSpec {
    NullSpec::from_q(&q.q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPValues {
    pub p: Vec<f64>,
    /// Features with σ = 0 but a nonzero statistic (assigned p = 0).
    pub zero_sigma: Vec<usize>,
}

/// Two-sided Gaussian p-values `2(1 − Φ(|J_i|/σ_i))`.
pub fn analytic_pvalues(j: &DVector<f64>, null: &NullSpec) -> Result<AnalyticPValues> {
    check_dims("analytic p-values", null.sigma.len(), j.len())?;
    let mut zero_sigma = Vec::new();
    let mut p = Vec::with_capacity(j.len());
    for (i, (&ji, &si)) in j.iter().zip(null.sigma.iter()).enumerate() {
        if !(si >= 0.0) || !si.is_finite() {
            return Err(GdmError::InvalidArgument(format!("invalid null sigma {si} at feature {i}")));
        }
        if !ji.is_finite() {
            return Err(GdmError::NonFinite("pattern"));
        }
        let pi = if si == 0.0 {
            if ji == 0.0 {
                1.0
            } else {
                zero_sigma.push(i);
                0.0
            }
        } else {
            erfc(ji.abs() / si / std::f64::consts::SQRT_2).min(1.0)
        };
        p.push(pi);
    }
    Ok(AnalyticPValues { p, zero_sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationMode {
    /// Refit the model for every relabeling.
    FullRefit,
    /// Reuse the `Q` of the observed labels.
    FixedQ,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult {
    pub p: Vec<f64>,
    pub observed: Vec<f64>,
    /// Mean of each feature's permuted statistic.
    pub perm_mean: Vec<f64>,
    /// Population standard deviation of each feature's permuted statistic.
    pub perm_std: Vec<f64>,
    /// Relabelings actually evaluated (excluding the observed labeling).
    pub n_permutations: usize,
    /// True when every non-identity relabeling was enumerated.
    pub exhaustive: bool,
}

const CHUNK: usize = 64;

struct Partial {
    count: Vec<u64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Partial {
    fn new(d: usize) -> Self {
        Self {
            count: vec![0; d],
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
        }
    }

    fn add(&mut self, stat: &DVector<f64>, observed: &DVector<f64>) {
        for i in 0..stat.len() {
            let (v, o) = (stat[i], observed[i].abs());
            if v.abs() >= o - TIE_REL_TOL * o {
                self.count[i] += 1;
            }
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
    }

    fn merge(&mut self, other: &Partial) {
        for i in 0..self.count.len() {
            self.count[i] += other.count[i];
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
    }
}

fn factorial_at_most(n: usize, cap: usize) -> Option<usize> {
    let mut f: usize = 1;
    for i in 2..=n {
        f = f.checked_mul(i)?;
        if f > cap {
            return None;
        }
    }
    Some(f)
}

/// All permutations of `0..n` except the identity, in Heap's order.
pub fn non_identity_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Permutation p-values `(1 + #{|J^π_i| ≥ |J_i|}) / (n_perm + 1)`.
///
/// Relabelings are drawn uniformly with replacement, each from its own
/// seed derived from `seed` and the permutation index, so the result does
/// not depend on thread scheduling. When `n! ≤ n_perm + 1` every
/// non-identity relabeling is enumerated instead and the p-value is exact.
pub fn permutation_pvalues(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    n_perm: usize,
    seed: u64,
    mode: PermutationMode,
) -> Result<PermutationResult> {
    if n_perm < 1 {
        return Err(GdmError::InvalidArgument("n_perm must be at least 1".into()));
    }
    let n = y.len();
    let d = x.ncols();
    let route = RoutePreference::Auto.resolve(n, d, basis.k());
    let fixed_q = match mode {
        PermutationMode::FixedQ => Some(build_q_matrix(x, y, basis, hyper)?),
        PermutationMode::FullRefit => None,
    };
    let statistic = |labels: &DVector<f64>| -> Result<DVector<f64>> {
        match &fixed_q {
            Some(q) => q.apply(labels),
            None => Ok(solve(x, labels, basis, hyper, route)?.j),
        }
    };
    let observed = statistic(y)?;
    let permute = |perm: &[usize]| DVector::from_iterator(n, perm.iter().map(|&i| y[i]));

    let (partial, used, exhaustive) = match factorial_at_most(n, n_perm + 1) {
        Some(_) => {
            let perms = non_identity_permutations(n);
            let partial = reduce_chunks(perms.len(), d, |idx, acc| {
                let stat = statistic(&permute(&perms[idx]))?;
                acc.add(&stat, &observed);
                Ok(())
            })?;
            (partial, perms.len(), true)
        }
        None => {
            let partial = reduce_chunks(n_perm, d, |idx, acc| {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut seeds::rng(seeds::derive(seed, idx as u64)));
                let stat = statistic(&permute(&perm))?;
                acc.add(&stat, &observed);
                Ok(())
            })?;
            (partial, n_perm, false)
        }
    };

    let denom = (used + 1) as f64;
    let p = partial.count.iter().map(|&c| (1 + c) as f64 / denom).collect();
    let m = used as f64;
    let perm_mean: Vec<f64> = partial.sum.iter().map(|s| s / m).collect();
    let perm_std = partial
        .sum_sq
        .iter()
        .zip(&perm_mean)
        .map(|(sq, mu)| (sq / m - mu * mu).max(0.0).sqrt())
        .collect();
    Ok(PermutationResult {
        p,
        observed: observed.iter().copied().collect(),
        perm_mean,
        perm_std,
        n_permutations: used,
        exhaustive,
    })
}

/// Process `0..total` in fixed-size chunks (possibly in parallel) and merge
/// the partial sums in chunk order.
fn reduce_chunks<F>(total: usize, d: usize, work: F) -> Result<Partial>
where
    F: Fn(usize, &mut Partial) -> Result<()> + Sync,
{
    let chunks: Vec<usize> = (0..total.div_ceil(CHUNK)).collect();
    let partials: Vec<Partial> = chunks
        .par_iter()
        .map(|&c| {
            let mut acc = Partial::new(d);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(total) {
                work(idx, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total_acc = Partial::new(d);
    for p in &partials {
        total_acc.merge(p);
    }
    Ok(total_acc)
}

/// Benjamini–Hochberg step-up rejections at level `q`.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<Vec<bool>> {
    if p.is_empty() {
        return Err(GdmError::InvalidArgument("no p-values".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(GdmError::InvalidArgument(format!("fdr level {q} outside (0, 1)")));
    }
    if let Some(bad) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(GdmError::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| p[i] <= (rank + 1) as f64 * q / m as f64)
        .map(|(_, &i)| p[i])
        .last();
    Ok(match cutoff {
        Some(t) => p.iter().map(|&v| v <= t).collect(),
        None => vec![false; m],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMethod {
    Analytic,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub statistic: Vec<f64>,
    /// Null standard deviations (analytic) or permutation standard
    /// deviations.
    pub sigma: Vec<f64>,
    pub p_raw: Vec<f64>,
    pub rejected: Vec<bool>,
    pub q_level: f64,
    pub method: InferenceMethod,
    pub n_permutations: Option<usize>,
    pub zero_sigma: Vec<usize>,
}

/// Analytic p-values and BH rejections for a GDM fit.
pub fn analytic_inference(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    q_level: f64,
) -> Result<InferenceResult> {
    let q = build_q_matrix(x, y, basis, hyper)?;
    let j = q.apply(y)?;
    let null = analytic_null(&q);
    let pv = analytic_pvalues(&j, &null)?;
    let rejected = bh_fdr(&pv.p, q_level)?;
    Ok(InferenceResult {
        statistic: j.iter().copied().collect(),
        sigma: null.sigma.iter().copied().collect(),
        p_raw: pv.p,
        rejected,
        q_level,
        method: InferenceMethod::Analytic,
        n_permutations: None,
        zero_sigma: pv.zero_sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub n_perm: usize,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCurve {
    pub points: Vec<AgreementPoint>,
    /// Least-squares slope of log10(error) against log10(n_perm); absent with
    /// fewer than two points of positive error.
    pub slope: Option<f64>,
}

impl AgreementCurve {
    /// Number of budget steps at which the error increased.
    pub fn inversions(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[1].mean_abs_error > w[0].mean_abs_error)
            .count()
    }
}

pub fn pvalue_agreement(p_analytic: &[f64], p_perm_by_budget: &BTreeMap<usize, Vec<f64>>) -> Result<AgreementCurve> {
    let mut points = Vec::with_capacity(p_perm_by_budget.len());
    for (&budget, p) in p_perm_by_budget {
        check_dims("agreement p-values", p_analytic.len(), p.len())?;
        if p.is_empty() {
            return Err(GdmError::InvalidArgument("empty p-value vector".into()));
        }
        let mae = p_analytic.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        points.push(AgreementPoint {
            n_perm: budget,
            mean_abs_error: mae,
        });
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|pt| pt.mean_abs_error > 0.0 && pt.n_perm > 0)
        .map(|pt| ((pt.n_perm as f64).log10(), pt.mean_abs_error.log10()))
        .collect();
    let slope = if logs.len() >= 2 { Some(ols_slope(&logs)) } else { None };
    Ok(AgreementCurve { points, slope })
}

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Kolmogorov–Smirnov distance between the empirical distribution of `p` and
/// Uniform(0, 1).
pub fn ks_uniform(p: &[f64]) -> f64 {
    let mut v = p.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / m;
            let hi = (i + 1) as f64 / m - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{standardize_labels, Labels, DEFAULT_RANK_TOL};
    use crate::solver::solve_dual;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn instance(n: usize, d: usize, k_raw: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, CovariateBasis) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let raw = DMatrix::from_fn(n, k_raw, |_, _| StandardNormal.sample(&mut rng));
        let labels: Vec<String> = (0..n).map(|i| if i % 3 == 0 { "b".into() } else { "a".into() }).collect();
        let (y, _) = standardize_labels(&Labels::Categorical(labels)).unwrap();
        let names: Vec<String> = (0..k_raw).map(|i| format!("c{i}")).collect();
        (x, y, CovariateBasis::build(&raw, &names, DEFAULT_RANK_TOL).unwrap())
    }

    #[test]
    fn q_times_labels_is_the_dual_pattern() {
        for (n, d, k) in [(12, 5, 2), (9, 30, 1), (20, 20, 0)] {
            let (x, y, basis) = instance(n, d, k, 11);
            let h = GdmHyperParams::new(0.8, 2.5).unwrap();
            let q = build_q_matrix(&x, &y, &basis, &h).unwrap();
            let j = solve_dual(&x, &y, &basis, &h).unwrap().j;
            let diff = (q.apply(&y).unwrap() - &j).amax();
            assert!(diff / (1.0 + j.amax()) < 1e-10, "diff {diff}");
            assert!(q.scalar_s > 0.0);
        }
    }

    #[test]
    fn q_matches_closed_form_factorization() {
        // Q = (λ₁+λ₂)·Zᵀ(λ₁ZZᵀ + sI)⁻¹ with Z = RX
        let (x, y, basis) = instance(10, 4, 1, 12);
        let h = GdmHyperParams::new(1.3, 0.4).unwrap();
        let q = build_q_matrix(&x, &y, &basis, &h).unwrap();
        let z = basis.residual(&x).unwrap();
        let mut g = &z * z.transpose() * h.lambda1;
        for i in 0..10 {
            g[(i, i)] += q.scalar_s;
        }
        let expect = z.transpose() * g.try_inverse().unwrap() * (h.lambda1 + h.lambda2);
        assert!((q.q - expect).amax() < 1e-10);
    }

    #[test]
    fn zero_labels_give_zero_pattern() {
        let (x, _, basis) = instance(8, 3, 1, 13);
        let y = DVector::zeros(8);
        let q = build_q_matrix(&x, &y, &basis, &GdmHyperParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(q.apply(&y).unwrap().norm(), 0.0);
    }

    #[test]
    fn null_sigma_is_row_norm() {
        let mut q = DMatrix::zeros(2, 5);
        q[(1, 0)] = 3.0;
        q[(1, 1)] = 4.0;
        let null = NullSpec::from_q(&q);
        assert_eq!(null.sigma[0], 0.0);
        assert_eq!(null.sigma[1], 5.0);
    }

    #[test]
    fn gaussian_pvalues() {
        let null = NullSpec {
            sigma: DVector::from_vec(vec![2.0, 2.0, 2.0, 0.0, 0.0]),
        };
        let j = DVector::from_vec(vec![0.0, 1.959963984540054 * 2.0, 2.0, 0.0, 1.0]);
        let p = analytic_pvalues(&j, &null).unwrap();
        assert_eq!(p.p[0], 1.0);
        assert_relative_eq!(p.p[1], 0.05, epsilon = 1e-6);
        assert_relative_eq!(p.p[2], 0.317311, epsilon = 1e-6);
        assert_eq!(p.p[3], 1.0);
        assert_eq!(p.p[4], 0.0);
        assert_eq!(p.zero_sigma, vec![4]);
        let bad = NullSpec {
            sigma: DVector::from_vec(vec![-1.0]),
        };
        assert!(analytic_pvalues(&DVector::from_vec(vec![1.0]), &bad).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_fdr(&[1.0, 1.0, 1.0], 0.05).unwrap(), vec![false; 3]);
        assert_eq!(
            bh_fdr(&[0.01, 0.02, 0.04, 0.8], 0.05).unwrap(),
            vec![true, true, false, false]
        );
        assert_eq!(bh_fdr(&[0.04], 0.05).unwrap(), vec![true]);
        // step-up: a later rank can rescue earlier ones
        assert_eq!(bh_fdr(&[0.04, 0.03, 0.045], 0.05).unwrap(), vec![true, true, true]);
        // ties are rejected together
        assert_eq!(bh_fdr(&[0.02, 0.02, 0.9], 0.05).unwrap(), vec![true, true, false]);
        assert!(bh_fdr(&[], 0.05).is_err());
        assert!(bh_fdr(&[0.5], 1.5).is_err());
        assert!(bh_fdr(&[1.5], 0.05).is_err());
    }

    #[test]
    fn heap_enumeration_is_complete() {
        let perms = non_identity_permutations(4);
        assert_eq!(perms.len(), 23);
        let mut set: Vec<Vec<usize>> = perms.clone();
        set.sort();
        set.dedup();
        assert_eq!(set.len(), 23);
        assert!(!perms.contains(&vec![0, 1, 2, 3]));
    }

    #[test]
    fn constant_labels_give_unit_pvalues() {
        let (x, _, basis) = instance(7, 3, 0, 14);
        let y = DVector::zeros(7);
        let h = GdmHyperParams::new(1.0, 1.0).unwrap();
        let r = permutation_pvalues(&x, &y, &basis, &h, 50, 1, PermutationMode::FullRefit).unwrap();
        assert!(r.p.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn permutation_is_reproducible_and_validates_budget() {
        let (x, y, basis) = instance(15, 4, 1, 15);
        let h = GdmHyperParams::new(1.0, 0.5).unwrap();
        let a = permutation_pvalues(&x, &y, &basis, &h, 200, 42, PermutationMode::FullRefit).unwrap();
        let b = permutation_pvalues(&x, &y, &basis, &h, 200, 42, PermutationMode::FullRefit).unwrap();
        assert_eq!(a, b);
        assert!(!a.exhaustive);
        assert!(permutation_pvalues(&x, &y, &basis, &h, 0, 42, PermutationMode::FullRefit).is_err());
    }

    #[test]
    fn agreement_curve_edge_cases() {
        let pa = vec![0.1, 0.5, 0.9];
        let mut same = BTreeMap::new();
        same.insert(10, pa.clone());
        same.insert(100, pa.clone());
        let c = pvalue_agreement(&pa, &same).unwrap();
        assert!(c.points.iter().all(|p| p.mean_abs_error == 0.0));
        assert_eq!(c.slope, None);

        let mut one = BTreeMap::new();
        one.insert(10, vec![0.2, 0.5, 0.9]);
        let c = pvalue_agreement(&pa, &one).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.slope, None);

        let mut bad = BTreeMap::new();
        bad.insert(10, vec![0.2]);
        assert!(pvalue_agreement(&pa, &bad).is_err());

        let mut decay = BTreeMap::new();
        decay.insert(10, vec![0.1 + 0.1, 0.5, 0.9]);
        decay.insert(1000, vec![0.1 + 0.01, 0.5, 0.9]);
        let c = pvalue_agreement(&pa, &decay).unwrap();
        assert_relative_eq!(c.slope.unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn ks_distance() {
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert_relative_eq!(ks_uniform(&grid), 0.005, epsilon = 1e-12);
        assert_relative_eq!(ks_uniform(&[0.0, 0.0]), 1.0, epsilon = 1e-12);
    }
}
