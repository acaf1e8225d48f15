//! Cohort data, label standardization, covariate bases and residualization.
//!
//! Every solver in the crate consumes the types defined here. The covariate
//! basis always carries an intercept column first, so projecting onto it also
//! removes the mean.

use std::collections::{BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, check_finite, GdmError, Result};
use crate::linalg::{mean, population_variance};

/// Default relative singular-value threshold for covariate rank checks.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Tolerance used when checking that labels were standardized.
pub const STANDARDIZED_TOL: f64 = 1e-8;

pub const INTERCEPT_NAME: &str = "intercept";

/// Raw labels of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Categorical(Vec<String>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Categorical(v) => Labels::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Distinct class names in sorted order (empty for real labels).
    pub fn classes(&self) -> Vec<String> {
        match self {
            Labels::Categorical(v) => v.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            Labels::Real(_) => Vec::new(),
        }
    }

    pub fn as_strings(&self) -> Vec<String> {
        match self {
            Labels::Categorical(v) => v.clone(),
            Labels::Real(v) => v.iter().map(|x| format!("{x}")).collect(),
        }
    }
}

/// The unit of ingestion and evaluation: features, labels, raw covariates and
/// optional site tags for `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub features: DMatrix<f64>,
    pub labels: Labels,
    /// Raw covariates without the intercept column.
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    pub site: Option<Vec<String>>,
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
}

impl Cohort {
    pub fn new(
        features: DMatrix<f64>,
        labels: Labels,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        site: Option<Vec<String>>,
        feature_names: Vec<String>,
        subject_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        let d = features.ncols();
        if n < 2 {
            return Err(GdmError::InvalidCohort(format!("need at least 2 subjects, got {n}")));
        }
        if d < 1 {
            return Err(GdmError::InvalidCohort("need at least one feature".into()));
        }
        check_dims("cohort labels", n, labels.len())?;
        check_dims("cohort covariate rows", n, covariates.nrows())?;
        check_dims("cohort covariate names", covariates.ncols(), covariate_names.len())?;
        check_dims("cohort feature names", d, feature_names.len())?;
        check_dims("cohort subject ids", n, subject_ids.len())?;
        if let Some(s) = &site {
            check_dims("cohort site tags", n, s.len())?;
        }
        check_finite("features", features.iter())?;
        check_finite("covariates", covariates.iter())?;
        if let Labels::Real(v) = &labels {
            check_finite("labels", v.iter())?;
        }

        let mut seen = HashSet::new();
        for id in &subject_ids {
            if !seen.insert(id.as_str()) {
                return Err(GdmError::DuplicateId(id.clone()));
            }
        }
        let mut seen = HashSet::new();
        for name in feature_names.iter().chain(covariate_names.iter()) {
            if !seen.insert(name.as_str()) {
                return Err(GdmError::InvalidCohort(format!("duplicate column name '{name}'")));
            }
        }
        if let Labels::Categorical(_) = &labels {
            let classes = labels.classes();
            if classes.len() < 2 {
                return Err(GdmError::DegenerateLabels(format!(
                    "only one class present ({})",
                    classes.first().map(String::as_str).unwrap_or("")
                )));
            }
        }

        Ok(Self {
            features,
            labels,
            covariates,
            covariate_names,
            site,
            feature_names,
            subject_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k_raw(&self) -> usize {
        self.covariates.ncols()
    }

    /// Rows `idx` of the cohort, in the given order. Invariants are not
    /// re-checked: a subset may hold a single class.
    pub fn subset(&self, idx: &[usize]) -> Cohort {
        Cohort {
            features: select_rows(&self.features, idx),
            labels: self.labels.subset(idx),
            covariates: select_rows(&self.covariates, idx),
            covariate_names: self.covariate_names.clone(),
            site: self.site.as_ref().map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
            feature_names: self.feature_names.clone(),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
        }
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Distinct site tags in sorted order; a cohort without a site column has
    /// one implicit site.
    pub fn sites(&self) -> Vec<String> {
        match &self.site {
            Some(s) => s.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            None => vec![String::new()],
        }
    }

    pub fn site_indices(&self, site: &str) -> Vec<usize> {
        match &self.site {
            Some(s) => (0..self.n()).filter(|&i| s[i] == site).collect(),
            None => (0..self.n()).collect(),
        }
    }
}

pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// How raw labels are mapped to numbers before standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LabelCoding {
    /// `negative` is coded −1, `positive` +1. The lexicographically smaller
    /// class is always `negative`.
    Binary { negative: String, positive: String },
    Identity,
}

/// Records how labels were coded, centered and scaled so the mapping can be
/// reapplied to new data and inverted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTransform {
    pub coding: LabelCoding,
    pub mean: f64,
    pub scale: f64,
}

impl LabelTransform {
    /// Code, center and scale `labels` to zero mean and unit population
    /// variance.
    pub fn fit(labels: &Labels) -> Result<(DVector<f64>, LabelTransform)> {
        let coding = match labels {
            Labels::Categorical(_) => {
                let classes = labels.classes();
                match classes.len() {
                    0 | 1 => {
                        return Err(GdmError::DegenerateLabels(
                            "a single class cannot be standardized".into(),
                        ))
                    }
                    2 => LabelCoding::Binary {
                        negative: classes[0].clone(),
                        positive: classes[1].clone(),
                    },
                    m => {
                        return Err(GdmError::DegenerateLabels(format!(
                            "expected two classes, found {m}"
                        )))
                    }
                }
            }
            Labels::Real(v) => {
                check_finite("labels", v.iter())?;
                LabelCoding::Identity
            }
        };
        let coded = code_labels(&coding, labels)?;
        if coded.len() < 2 {
            return Err(GdmError::DegenerateLabels("need at least two labels".into()));
        }
        let m = mean(&coded);
        let var = population_variance(&coded);
        if !(var > 0.0) {
            return Err(GdmError::ZeroVariance("labels have zero variance".into()));
        }
        let t = LabelTransform {
            coding,
            mean: m,
            scale: var.sqrt(),
        };
        let y = DVector::from_iterator(coded.len(), coded.iter().map(|c| (c - t.mean) / t.scale));
        Ok((y, t))
    }

    /// Apply the recorded transform to new labels.
    pub fn transform(&self, labels: &Labels) -> Result<DVector<f64>> {
        let coded = code_labels(&self.coding, labels)?;
        Ok(DVector::from_iterator(
            coded.len(),
            coded.iter().map(|c| (c - self.mean) / self.scale),
        ))
    }

    /// Map standardized values back to the coded scale.
    pub fn inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.scale + self.mean)
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.coding, LabelCoding::Binary { .. })
    }

    /// Class for a standardized-space score: positive scores map to the
    /// +1-coded class, zero and negative to the −1-coded class.
    pub fn class_of(&self, score: f64) -> String {
        match &self.coding {
            LabelCoding::Binary { negative, positive } => {
                if score > 0.0 {
                    positive.clone()
                } else {
                    negative.clone()
                }
            }
            LabelCoding::Identity => format!("{}", score * self.scale + self.mean),
        }
    }

    /// Standardized-space targets of the two classes, (−1-coded, +1-coded).
    pub fn class_targets(&self) -> (f64, f64) {
        ((-1.0 - self.mean) / self.scale, (1.0 - self.mean) / self.scale)
    }

    /// ±1 code of every label (binary coding only).
    pub fn signs(&self, labels: &Labels) -> Result<Vec<f64>> {
        match self.coding {
            LabelCoding::Binary { .. } => code_labels(&self.coding, labels),
            LabelCoding::Identity => Err(GdmError::InvalidArgument(
                "class signs need two-class labels".into(),
            )),
        }
    }
}

fn code_labels(coding: &LabelCoding, labels: &Labels) -> Result<Vec<f64>> {
    match (coding, labels) {
        (LabelCoding::Binary { negative, positive }, Labels::Categorical(v)) => v
            .iter()
            .map(|l| {
                if l == negative {
                    Ok(-1.0)
                } else if l == positive {
                    Ok(1.0)
                } else {
                    Err(GdmError::InvalidArgument(format!("unknown class '{l}'")))
                }
            })
            .collect(),
        (LabelCoding::Identity, Labels::Real(v)) => Ok(v.clone()),
        _ => Err(GdmError::InvalidArgument(
            "label kind does not match the fitted coding".into(),
        )),
    }
}

/// Standardize raw labels; see [`LabelTransform::fit`].
pub fn standardize_labels(labels: &Labels) -> Result<(DVector<f64>, LabelTransform)> {
    LabelTransform::fit(labels)
}

/// Error unless `y` has mean 0 and population variance 1.
pub fn ensure_standardized(y: &DVector<f64>) -> Result<()> {
    let m = mean(y.as_slice());
    let var = population_variance(y.as_slice());
    if m.abs() > STANDARDIZED_TOL || (var - 1.0).abs() > STANDARDIZED_TOL {
        return Err(GdmError::NotStandardized { mean: m, variance: var });
    }
    Ok(())
}

/// Prepend the intercept column to raw covariates.
pub fn augment_covariates(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let n = raw.nrows();
    DMatrix::from_fn(n, raw.ncols() + 1, |r, c| if c == 0 { 1.0 } else { raw[(r, c - 1)] })
}

/// Covariate design `C` (intercept first) with its Gram inverse `(CᵀC)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBasis {
    matrix: DMatrix<f64>,
    column_names: Vec<String>,
    gram_inverse: DMatrix<f64>,
}

impl CovariateBasis {
    /// Prepend an intercept to `raw` and invert the Gram matrix, failing on
    /// rank deficiency.
    pub fn build(raw: &DMatrix<f64>, names: &[String], rank_tol: f64) -> Result<Self> {
        Self::build_inner(raw, names, rank_tol, false)
    }

    /// As [`CovariateBasis::build`], but falls back to a tolerance-based
    /// pseudo-inverse instead of failing on rank deficiency.
    pub fn build_pseudo_inverse(raw: &DMatrix<f64>, names: &[String], rank_tol: f64) -> Result<Self> {
        Self::build_inner(raw, names, rank_tol, true)
    }

    pub fn intercept_only(n: usize) -> Self {
        Self {
            matrix: DMatrix::from_element(n, 1, 1.0),
            column_names: vec![INTERCEPT_NAME.to_string()],
            gram_inverse: DMatrix::from_element(1, 1, 1.0 / n as f64),
        }
    }

    fn build_inner(raw: &DMatrix<f64>, names: &[String], rank_tol: f64, allow_pinv: bool) -> Result<Self> {
        check_dims("covariate names", raw.ncols(), names.len())?;
        check_finite("covariates", raw.iter())?;
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(GdmError::InvalidArgument(format!("rank_tol {rank_tol} outside (0, 1)")));
        }
        let matrix = augment_covariates(raw);
        let n = matrix.nrows();
        let k = matrix.ncols();
        if n < k {
            return Err(GdmError::InvalidArgument(format!(
                "{n} subjects cannot support {k} covariate columns"
            )));
        }
        let mut column_names = Vec::with_capacity(k);
        column_names.push(INTERCEPT_NAME.to_string());
        column_names.extend(names.iter().cloned());

        let gram = matrix.transpose() * &matrix;
        let deficient = singular_ratio(&matrix) <= rank_tol;
        let gram_inverse = if deficient {
            if !allow_pinv {
                return Err(rank_error(&matrix, &column_names, rank_tol));
            }
            let svd = gram.svd(true, true);
            let smax = svd.singular_values.max();
            svd.pseudo_inverse(smax * rank_tol * rank_tol)
                .map_err(|e| GdmError::InvalidArgument(e.to_string()))?
        } else {
            match gram.clone().cholesky() {
                Some(ch) => ch.inverse(),
                None => return Err(rank_error(&matrix, &column_names, rank_tol)),
            }
        };
        Ok(Self {
            matrix,
            column_names,
            gram_inverse,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    /// Least-squares coefficients `(CᵀC)⁻¹CᵀV`, shape k × cols(V).
    pub fn coefficients(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("covariate projection rows", self.n(), v.nrows())?;
        Ok(&self.gram_inverse * (self.matrix.tr_mul(v)))
    }

    pub fn coefficients_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("covariate projection rows", self.n(), v.len())?;
        Ok(&self.gram_inverse * self.matrix.tr_mul(v))
    }

    /// `C(CᵀC)⁻¹CᵀV`, computed in factored form.
    pub fn project(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.matrix * self.coefficients(v)?)
    }

    pub fn project_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * self.coefficients_vec(v)?)
    }

    /// `(I − P)V`.
    pub fn residual(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(v - self.project(v)?)
    }

    pub fn residual_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v - self.project_vec(v)?)
    }
}

fn singular_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

fn rank_error(matrix: &DMatrix<f64>, names: &[String], rank_tol: f64) -> GdmError {
    for j in 1..matrix.ncols() {
        let col = matrix.column(j);
        let m = col.mean();
        let spread = col.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
        if spread <= rank_tol * m.abs().max(f64::MIN_POSITIVE) || spread == 0.0 {
            return GdmError::RankDeficient {
                column: names[j].clone(),
                reason: "is collinear with intercept".into(),
            };
        }
        let leading = matrix.columns(0, j + 1).into_owned();
        if singular_ratio(&leading) <= rank_tol {
            return GdmError::RankDeficient {
                column: names[j].clone(),
                reason: "is linearly dependent on preceding columns".into(),
            };
        }
    }
    GdmError::RankDeficient {
        column: names.last().cloned().unwrap_or_default(),
        reason: "makes the covariate matrix rank deficient".into(),
    }
}

/// Per-feature regression of `X` on the training covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizerFit {
    /// k × d.
    pub coefficients: DMatrix<f64>,
}

impl ResidualizerFit {
    pub fn fit(x: &DMatrix<f64>, basis: &CovariateBasis) -> Result<Self> {
        Ok(Self {
            coefficients: basis.coefficients(x)?,
        })
    }

    pub fn k(&self) -> usize {
        self.coefficients.nrows()
    }

    /// `X_new − C_new · coefficients`, with `c_new` including the intercept.
    pub fn apply(&self, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("residualizer covariate columns", self.k(), c_new.ncols())?;
        check_dims("residualizer feature columns", self.coefficients.ncols(), x_new.ncols())?;
        check_dims("residualizer rows", x_new.nrows(), c_new.nrows())?;
        Ok(x_new - c_new * &self.coefficients)
    }
}

pub fn fit_residualizer(x: &DMatrix<f64>, basis: &CovariateBasis) -> Result<ResidualizerFit> {
    ResidualizerFit::fit(x, basis)
}

pub fn apply_residualizer(fit: &ResidualizerFit, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    fit.apply(x_new, c_new)
}

/// Optional per-feature z-scoring with training statistics. Off by default
/// throughout the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let (mean, scale) = x
            .column_iter()
            .map(|c| {
                let v: Vec<f64> = c.iter().copied().collect();
                let sd = population_variance(&v).sqrt();
                (crate::linalg::mean(&v), if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("feature scaler columns", self.mean.len(), x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.scale[c]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cat(v: &[&str]) -> Labels {
        Labels::Categorical(v.iter().map(|s| s.to_string()).collect())
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn balanced_two_class_labels() {
        let (y, t) = standardize_labels(&cat(&["A", "A", "B", "B"])).unwrap();
        assert_eq!(y.as_slice(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(t.mean, 0.0);
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn imbalanced_two_class_labels() {
        let (y, t) = standardize_labels(&cat(&["A", "A", "A", "B"])).unwrap();
        let sd = 0.75f64.sqrt();
        assert_relative_eq!(t.mean, -0.5);
        assert_relative_eq!(t.scale, sd);
        let expect = [-0.5 / sd, -0.5 / sd, -0.5 / sd, 1.5 / sd];
        for (a, b) in y.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(y[0], -0.5773502691896258, epsilon = 1e-12);
        assert_relative_eq!(y[3], 1.7320508075688772, epsilon = 1e-12);
    }

    #[test]
    fn real_labels() {
        let (y, _) = standardize_labels(&Labels::Real(vec![1.0, 2.0, 3.0])).unwrap();
        assert_relative_eq!(y[0], -1.224744871391589, epsilon = 1e-12);
        assert_relative_eq!(y[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(y[2], 1.224744871391589, epsilon = 1e-12);
    }

    #[test]
    fn lexicographic_class_coding() {
        let (y, t) = standardize_labels(&cat(&["patient", "control"])).unwrap();
        assert_eq!(
            t.coding,
            LabelCoding::Binary {
                negative: "control".into(),
                positive: "patient".into()
            }
        );
        assert!(y[0] > 0.0 && y[1] < 0.0);
        assert_eq!(t.class_of(0.0), "control");
        assert_eq!(t.class_of(1e-300), "patient");
    }

    #[test]
    fn degenerate_labels() {
        let err = standardize_labels(&cat(&["A", "A"])).unwrap_err();
        assert!(err.to_string().contains("degenerate labels"));
        assert!(matches!(
            standardize_labels(&Labels::Real(vec![2.0, 2.0, 2.0])),
            Err(GdmError::ZeroVariance(_))
        ));
        assert!(standardize_labels(&cat(&["A", "B", "C"])).is_err());
    }

    #[test]
    fn intercept_only_projection_is_averaging() {
        let basis = CovariateBasis::build(&DMatrix::zeros(5, 0), &[], DEFAULT_RANK_TOL).unwrap();
        assert_eq!(basis.k(), 1);
        let eye = DMatrix::identity(5, 5);
        let p = basis.project(&eye).unwrap();
        for v in p.iter() {
            assert_relative_eq!(*v, 0.2, epsilon = 1e-15);
        }
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 10.0]);
        let pv = basis.project_vec(&v).unwrap();
        for x in pv.iter() {
            assert_relative_eq!(*x, 4.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_covariate_is_collinear_with_intercept() {
        let raw = DMatrix::from_row_slice(4, 2, &[70.0, 0.0, 70.0, 1.0, 70.0, 0.0, 70.0, 1.0]);
        let err = CovariateBasis::build(&raw, &names(&["age", "sex"]), DEFAULT_RANK_TOL).unwrap_err();
        match err {
            GdmError::RankDeficient { column, reason } => {
                assert_eq!(column, "age");
                assert!(reason.contains("collinear with intercept"));
            }
            e => panic!("unexpected {e}"),
        }
        // opt-in pseudo-inverse path still yields a valid projector
        let basis = CovariateBasis::build_pseudo_inverse(&raw, &names(&["age", "sex"]), DEFAULT_RANK_TOL).unwrap();
        let v = DVector::from_vec(vec![1.0, 5.0, 2.0, 3.0]);
        let p1 = basis.project_vec(&v).unwrap();
        let p2 = basis.project_vec(&p1).unwrap();
        assert!((p1 - p2).norm() < 1e-10);
    }

    #[test]
    fn dependent_covariate_is_named() {
        let raw = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let err = CovariateBasis::build(&raw, &names(&["a", "b"]), DEFAULT_RANK_TOL).unwrap_err();
        assert!(matches!(err, GdmError::RankDeficient { ref column, .. } if column == "b"));
    }

    #[test]
    fn small_projector_is_idempotent() {
        let raw = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 1.0, 4.0, 1.0]);
        let basis = CovariateBasis::build(&raw, &names(&["age", "sex"]), DEFAULT_RANK_TOL).unwrap();
        let p = basis.project(&DMatrix::identity(4, 4)).unwrap();
        assert!((&p * &p - &p).abs().max() < 1e-10);
        assert!((&p - p.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn projector_fixed_point_and_kernel() {
        let raw = DMatrix::from_row_slice(5, 1, &[1.0, 3.0, 2.0, 5.0, 4.0]);
        let basis = CovariateBasis::build(&raw, &names(&["age"]), DEFAULT_RANK_TOL).unwrap();
        let inside = basis.matrix() * DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        assert!((basis.project(&inside).unwrap() - &inside).abs().max() < 1e-12);
        let outside = basis.residual(&DMatrix::from_fn(5, 3, |r, c| ((r * 7 + c * 3) % 5) as f64)).unwrap();
        assert!(basis.project(&outside).unwrap().abs().max() < 1e-12);
    }

    #[test]
    fn projection_dimension_mismatch() {
        let basis = CovariateBasis::intercept_only(4);
        assert!(matches!(
            basis.project(&DMatrix::zeros(3, 2)),
            Err(GdmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residualizer_centers_with_intercept_only() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 6.0, 60.0]);
        let basis = CovariateBasis::intercept_only(3);
        let fit = fit_residualizer(&x, &basis).unwrap();
        let r = fit.apply(&x, basis.matrix()).unwrap();
        assert_relative_eq!(r[(0, 0)], -2.0, epsilon = 1e-12);
        assert_relative_eq!(r[(2, 1)], 30.0, epsilon = 1e-12);
    }

    #[test]
    fn residualizer_removes_exact_covariate_copy() {
        let age = [60.0, 72.0, 65.0, 80.0, 77.0, 58.0];
        let raw = DMatrix::from_column_slice(6, 1, &age);
        let x = DMatrix::from_fn(6, 2, |r, c| if c == 0 { age[r] } else { (r as f64).sin() });
        let basis = CovariateBasis::build(&raw, &names(&["age"]), DEFAULT_RANK_TOL).unwrap();
        let fit = fit_residualizer(&x, &basis).unwrap();
        let r = fit.apply(&x, basis.matrix()).unwrap();
        assert!(r.column(0).norm() < 1e-8 * x.norm());
        // normal equations on the training set
        assert!((basis.matrix().tr_mul(&r)).abs().max() < 1e-6 * x.norm());
    }

    #[test]
    fn residualizer_reuses_training_coefficients() {
        let raw = DMatrix::from_column_slice(4, 1, &[60.0, 65.0, 70.0, 75.0]);
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.4, 2.1, 2.4]);
        let basis = CovariateBasis::build(&raw, &names(&["age"]), DEFAULT_RANK_TOL).unwrap();
        let fit = fit_residualizer(&x, &basis).unwrap();
        let c_test = augment_covariates(&DMatrix::from_column_slice(2, 1, &[90.0, 95.0]));
        let x_test = DMatrix::from_row_slice(2, 1, &[3.0, 3.3]);
        let got = fit.apply(&x_test, &c_test).unwrap();
        let expect = &x_test - &c_test * &fit.coefficients;
        assert_eq!(got, expect);
        let wrong_k = DMatrix::from_element(2, 3, 1.0);
        assert!(fit.apply(&x_test, &wrong_k).is_err());
    }

    #[test]
    fn cohort_rejects_duplicates_and_single_class() {
        let x = DMatrix::zeros(2, 1);
        let c = DMatrix::zeros(2, 0);
        let dup = Cohort::new(
            x.clone(),
            cat(&["A", "B"]),
            c.clone(),
            vec![],
            None,
            names(&["f"]),
            names(&["s1", "s1"]),
        );
        assert!(matches!(dup, Err(GdmError::DuplicateId(id)) if id == "s1"));
        let single = Cohort::new(x, cat(&["A", "A"]), c, vec![], None, names(&["f"]), names(&["a", "b"]));
        assert!(matches!(single, Err(GdmError::DegenerateLabels(_))));
    }

    proptest! {
        #[test]
        fn projector_idempotent(seed in 0u64..1000, n in 5usize..30, k in 0usize..3) {
            let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % 10_000) as f64 / 100.0 };
            let raw = DMatrix::from_fn(n, k, |_, _| next());
            let v = DMatrix::from_fn(n, 3, |_, _| next());
            let basis = CovariateBasis::build(&raw, &vec!["c".to_string(); k].iter().enumerate().map(|(i, c)| format!("{c}{i}")).collect::<Vec<_>>(), DEFAULT_RANK_TOL).unwrap();
            let p1 = basis.project(&v).unwrap();
            let p2 = basis.project(&p1).unwrap();
            prop_assert!((&p2 - &p1).norm() <= 1e-8 * (1.0 + p1.norm()));
        }

        #[test]
        fn label_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            prop_assume!(population_variance(&vals) > 1e-6);
            let (y, t) = standardize_labels(&Labels::Real(vals.clone())).unwrap();
            prop_assert!(mean(y.as_slice()).abs() < 1e-10);
            prop_assert!((population_variance(y.as_slice()) - 1.0).abs() < 1e-10);
            let back = t.inverse(&y);
            for (a, b) in back.iter().zip(&vals) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) * 1e3);
            }
        }
    }
}
