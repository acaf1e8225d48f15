//! Comparison models: ridge regression on covariate-residualized features and
//! the activation pattern derived from it.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, check_finite, GdmError, Result};
use crate::inference::NullSpec;
use crate::linalg::{solve_spd, solve_spd_vec};
use crate::model::{CovariateBasis, LabelTransform, ResidualizerFit};
use crate::solver::Prediction;

/// Ridge regression `min ‖w‖² + λ‖Y − X_r·w‖²` fitted on residualized
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub w: DVector<f64>,
    pub lambda: f64,
    pub residualizer: ResidualizerFit,
    pub label_transform: LabelTransform,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(GdmError::InvalidHyperParams(format!("ridge lambda {lambda} must be positive")));
    }
    Ok(())
}

/// Ridge weights. Solved in the d × d primal when `d ≤ n`, otherwise through
/// `w = λX_rᵀ(I + λX_rX_rᵀ)⁻¹Y`.
pub fn ridge_weights(x_res: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    check_dims("ridge labels", x_res.nrows(), y.len())?;
    check_finite("ridge features", x_res.iter())?;
    check_finite("ridge labels", y.iter())?;
    let (n, d) = x_res.shape();
    if d <= n {
        let mut a = x_res.tr_mul(x_res) * lambda;
        for i in 0..d {
            a[(i, i)] += 1.0;
        }
        solve_spd_vec(a, &(x_res.tr_mul(y) * lambda), "ridge primal system")
    } else {
        let mut g = x_res * x_res.transpose() * lambda;
        for i in 0..n {
            g[(i, i)] += 1.0;
        }
        let alpha = solve_spd_vec(g, y, "ridge dual system")?;
        Ok(x_res.tr_mul(&alpha) * lambda)
    }
}

pub fn fit_ridge(
    x_res: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    residualizer: ResidualizerFit,
    label_transform: LabelTransform,
) -> Result<RidgeModel> {
    let w = ridge_weights(x_res, y, lambda)?;
    Ok(RidgeModel {
        w,
        lambda,
        residualizer,
        label_transform,
    })
}

impl RidgeModel {
    /// Residualize `x` on `basis`, then fit.
    pub fn fit(
        x: &DMatrix<f64>,
        basis: &CovariateBasis,
        y: &DVector<f64>,
        label_transform: &LabelTransform,
        lambda: f64,
    ) -> Result<Self> {
        let residualizer = ResidualizerFit::fit(x, basis)?;
        let x_res = residualizer.apply(x, basis.matrix())?;
        fit_ridge(&x_res, y, lambda, residualizer, label_transform.clone())
    }

    /// Residualize with the training coefficients and score; `c_new`
    /// includes the intercept.
    pub fn predict(&self, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<Prediction> {
        let x_res = self.residualizer.apply(x_new, c_new)?;
        let scores = x_res * &self.w;
        let classes = scores.iter().map(|&s| self.label_transform.class_of(s)).collect();
        Ok(Prediction { scores, classes })
    }
}

/// `Q_r = (I + λX_rᵀX_r)⁻¹λX_rᵀ` (d × n), so that `w = Q_r·Y`.
pub fn ridge_q_matrix(x_res: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    check_finite("ridge features", x_res.iter())?;
    let (n, d) = x_res.shape();
    if d <= n {
        let mut a = x_res.tr_mul(x_res) * lambda;
        for i in 0..d {
            a[(i, i)] += 1.0;
        }
        solve_spd(a, &(x_res.transpose() * lambda), "ridge primal system")
    } else {
        let mut g = x_res * x_res.transpose() * lambda;
        for i in 0..n {
            g[(i, i)] += 1.0;
        }
        let inv = solve_spd(g, &DMatrix::identity(n, n), "ridge dual system")?;
        Ok(x_res.transpose() * inv * lambda)
    }
}

/// Analytic permutation null of the ridge weights for standardized labels.
pub fn ridge_null(x_res: &DMatrix<f64>, lambda: f64) -> Result<NullSpec> {
    Ok(NullSpec::from_q(&ridge_q_matrix(x_res, lambda)?))
}

/// Ridge weights for a grid of λ from one SVD of `X_r`.
#[derive(Debug, Clone)]
pub struct RidgePath {
    v: DMatrix<f64>,
    sigma: DVector<f64>,
    uty: DVector<f64>,
}

impl RidgePath {
    pub fn new(x_res: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_dims("ridge labels", x_res.nrows(), y.len())?;
        check_finite("ridge features", x_res.iter())?;
        let svd = x_res.clone().svd(true, true);
        let singular = || GdmError::Singular {
            context: "ridge path SVD",
            condition: f64::INFINITY,
        };
        let u = svd.u.ok_or_else(singular)?;
        let vt = svd.v_t.ok_or_else(singular)?;
        Ok(Self {
            v: vt.transpose(),
            sigma: svd.singular_values,
            uty: u.tr_mul(y),
        })
    }

    pub fn weights(&self, lambda: f64) -> Result<DVector<f64>> {
        check_lambda(lambda)?;
        let scaled = DVector::from_iterator(
            self.sigma.len(),
            self.sigma
                .iter()
                .zip(self.uty.iter())
                .map(|(&s, &u)| lambda * s / (1.0 + lambda * s * s) * u),
        );
        Ok(&self.v * scaled)
    }
}

/// Forward-model pattern `a = Σ̂_X·w / (wᵀΣ̂_X·w)` of a linear decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    pub a: DVector<f64>,
    /// `a / ‖a‖`.
    pub unit: DVector<f64>,
    /// Variance of the training predictions, `wᵀΣ̂_X·w`.
    pub prediction_variance: f64,
}

/// Activation pattern of weights `w` on training features `x_train`.
///
/// The covariance uses centered features with 1/n normalization.
pub fn haufe_transform(w: &DVector<f64>, x_train: &DMatrix<f64>) -> Result<ActivationPattern> {
    check_dims("activation pattern weights", x_train.ncols(), w.len())?;
    let n = x_train.nrows() as f64;
    let mut xc = x_train.clone();
    for mut col in xc.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let s = &xc * w;
    let var = s.norm_squared() / n;
    let scale = (xc.norm_squared() / n) * w.norm_squared();
    if !(var > 1e-28 * scale) || !var.is_finite() {
        return Err(GdmError::DegeneratePattern);
    }
    let a = xc.tr_mul(&s) / (n * var);
    let unit = a.normalize();
    Ok(ActivationPattern {
        a,
        unit,
        prediction_variance: var,
    })
}

/// Classifier built on an activation pattern: scores are the training-fitted
/// least-squares rescaling of `X_r·a`.
#[derive(Debug, Clone, PartialEq)]
pub struct HaufeModel {
    pub ridge: RidgeModel,
    pub pattern: ActivationPattern,
    pub slope: f64,
}

impl HaufeModel {
    pub fn fit(
        x: &DMatrix<f64>,
        basis: &CovariateBasis,
        y: &DVector<f64>,
        label_transform: &LabelTransform,
        lambda: f64,
    ) -> Result<Self> {
        let ridge = RidgeModel::fit(x, basis, y, label_transform, lambda)?;
        let x_res = ridge.residualizer.apply(x, basis.matrix())?;
        Self::from_ridge(ridge, &x_res, y)
    }

    pub fn from_ridge(ridge: RidgeModel, x_res: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let pattern = haufe_transform(&ridge.w, x_res)?;
        let proj = x_res * &pattern.a;
        let denom = proj.norm_squared();
        if denom == 0.0 {
            return Err(GdmError::DegeneratePattern);
        }
        let slope = proj.dot(y) / denom;
        Ok(Self { ridge, pattern, slope })
    }

    pub fn predict(&self, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<Prediction> {
        let x_res = self.ridge.residualizer.apply(x_new, c_new)?;
        let scores = x_res * &self.pattern.a * self.slope;
        let classes = scores
            .iter()
            .map(|&s| self.ridge.label_transform.class_of(s))
            .collect();
        Ok(Prediction { scores, classes })
    }
}
