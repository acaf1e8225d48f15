//! Closed-form solvers for the generative discriminative machine.
//!
//! The model minimizes
//!
//! ```text
//! ‖J‖² + λ₁‖Y − XJ − C·W0‖² + λ₂‖Xᵀ − J·Yᵀ − A0·Cᵀ‖²_F
//! ```
//!
//! over the pattern `J` (d), covariate biases `W0` (k) and generative
//! covariate coefficients `A0` (d × k). Writing `P` for the projector onto
//! the columns of `C` and `R = I − P`, the pattern solves the d × d system
//!
//! ```text
//! [s·I + λ₁ XᵀRX] J = (λ₁ + λ₂) XᵀRY,     s = 1 + λ₂ YᵀRY
//! ```
//!
//! (the primal route), or equivalently an (n + k)-dimensional saddle-point
//! system in subject space (the dual route). `W0` and `A0` are the ordinary
//! least-squares fits of the discriminator and generator residuals given `J`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, check_finite, GdmError, Result};
use crate::linalg::{solve_spd, solve_spd_vec};
use crate::model::{ensure_standardized, CovariateBasis, LabelTransform};

/// Smallest accepted λ₁; the dual system carries an `I/λ₁` block.
pub const LAMBDA1_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdmHyperParams {
    /// Discriminative weight λ₁.
    pub lambda1: f64,
    /// Generative weight λ₂.
    pub lambda2: f64,
}

impl GdmHyperParams {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let h = Self { lambda1, lambda2 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(GdmError::InvalidHyperParams("λ values must be finite".into()));
        }
        if self.lambda1 < LAMBDA1_MIN {
            return Err(GdmError::InvalidHyperParams(format!(
                "lambda1 = {} below minimum {LAMBDA1_MIN}",
                self.lambda1
            )));
        }
        if self.lambda2 < 0.0 {
            return Err(GdmError::InvalidHyperParams(format!(
                "lambda2 = {} must be non-negative",
                self.lambda2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverRoute {
    Primal,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutePreference {
    /// Dual when `d > n + k`, primal otherwise.
    #[default]
    Auto,
    Primal,
    Dual,
}

impl RoutePreference {
    pub fn resolve(self, n: usize, d: usize, k: usize) -> SolverRoute {
        match self {
            RoutePreference::Primal => SolverRoute::Primal,
            RoutePreference::Dual => SolverRoute::Dual,
            RoutePreference::Auto if d > n + k => SolverRoute::Dual,
            RoutePreference::Auto => SolverRoute::Primal,
        }
    }
}

/// The three addends of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    /// ‖J‖²
    pub penalty: f64,
    /// λ₁‖Y − XJ − CW0‖²
    pub discriminator: f64,
    /// λ₂‖Xᵀ − JYᵀ − A0Cᵀ‖²_F
    pub generator: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.penalty + self.discriminator + self.generator
    }
}

fn check_parameter_shapes(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    j: &DVector<f64>,
    w0: &DVector<f64>,
    a0: &DMatrix<f64>,
) -> Result<()> {
    let (n, d) = x.shape();
    let k = c.ncols();
    check_dims("objective labels", n, y.len())?;
    check_dims("objective covariate rows", n, c.nrows())?;
    check_dims("objective J", d, j.len())?;
    check_dims("objective W0", k, w0.len())?;
    check_dims("objective A0 rows", d, a0.nrows())?;
    check_dims("objective A0 columns", k, a0.ncols())?;
    check_finite("objective inputs", x.iter().chain(y.iter()).chain(c.iter()))?;
    check_finite("objective parameters", j.iter().chain(w0.iter()).chain(a0.iter()))
}

pub fn gdm_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    j: &DVector<f64>,
    w0: &DVector<f64>,
    a0: &DMatrix<f64>,
    hyper: &GdmHyperParams,
) -> Result<ObjectiveTerms> {
    check_parameter_shapes(x, y, c, j, w0, a0)?;
    let e = y - x * j - c * w0;
    // generator residual, transposed: X − Y·Jᵀ − C·A0ᵀ (n × d)
    let f = x - y * j.transpose() - c * a0.transpose();
    Ok(ObjectiveTerms {
        penalty: j.norm_squared(),
        discriminator: hyper.lambda1 * e.norm_squared(),
        generator: hyper.lambda2 * f.norm_squared(),
    })
}

/// Analytic gradient of the objective with respect to `(J, W0, A0)`.
pub fn gdm_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    j: &DVector<f64>,
    w0: &DVector<f64>,
    a0: &DMatrix<f64>,
    hyper: &GdmHyperParams,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    check_parameter_shapes(x, y, c, j, w0, a0)?;
    let e = y - x * j - c * w0;
    let f = x - y * j.transpose() - c * a0.transpose();
    let (l1, l2) = (hyper.lambda1, hyper.lambda2);
    let gj = 2.0 * j - 2.0 * l1 * x.tr_mul(&e) - 2.0 * l2 * f.tr_mul(y);
    let gw0 = -2.0 * l1 * c.tr_mul(&e);
    let ga0 = -2.0 * l2 * f.tr_mul(c);
    Ok((gj, gw0, ga0))
}

/// Optimal parameters for one `(X, Y, C, λ)` instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GdmSolution {
    pub j: DVector<f64>,
    pub w0: DVector<f64>,
    pub a0: DMatrix<f64>,
}

/// A fitted model together with the label transform of its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct GdmModel {
    pub j: DVector<f64>,
    pub w0: DVector<f64>,
    pub a0: DMatrix<f64>,
    pub hyper: GdmHyperParams,
    pub label_transform: LabelTransform,
    pub route: SolverRoute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Scores in standardized-label space.
    pub scores: DVector<f64>,
    pub classes: Vec<String>,
}

impl GdmModel {
    /// `X_new·J + C_new·W0`; `c_new` must include the intercept column.
    pub fn predict(&self, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<Prediction> {
        check_dims("predict feature columns", self.j.len(), x_new.ncols())?;
        check_dims("predict covariate columns", self.w0.len(), c_new.ncols())?;
        check_dims("predict rows", x_new.nrows(), c_new.nrows())?;
        let scores = x_new * &self.j + c_new * &self.w0;
        let classes = scores.iter().map(|&s| self.label_transform.class_of(s)).collect();
        Ok(Prediction { scores, classes })
    }

    pub fn solution(&self) -> GdmSolution {
        GdmSolution {
            j: self.j.clone(),
            w0: self.w0.clone(),
            a0: self.a0.clone(),
        }
    }
}

pub fn predict(model: &GdmModel, x_new: &DMatrix<f64>, c_new: &DMatrix<f64>) -> Result<Prediction> {
    model.predict(x_new, c_new)
}

fn check_inputs(x: &DMatrix<f64>, y: &DVector<f64>, basis: &CovariateBasis, hyper: &GdmHyperParams) -> Result<()> {
    hyper.validate()?;
    check_dims("labels", x.nrows(), y.len())?;
    check_dims("covariate rows", x.nrows(), basis.n())?;
    if x.nrows() < basis.k() + 2 {
        return Err(GdmError::InvalidArgument(format!(
            "need n ≥ k + 2 subjects (n = {}, k = {})",
            x.nrows(),
            basis.k()
        )));
    }
    check_finite("features", x.iter())?;
    check_finite("labels", y.iter())
}

/// `s = 1 + λ₂·YᵀRY`.
pub fn generative_scalar(y: &DVector<f64>, basis: &CovariateBasis, lambda2: f64) -> Result<f64> {
    let r = basis.residual_vec(y)?;
    Ok(1.0 + lambda2 * y.dot(&r))
}

/// W0 and A0 given J, by least squares on the covariates.
pub fn recover_covariate_terms(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    j: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let w0 = basis.coefficients_vec(&(y - x * j))?;
    let a0 = basis.coefficients(&(x - y * j.transpose()))?.transpose();
    Ok((w0, a0))
}

/// Primal route without the standardization check on `y`.
pub fn solve_primal(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
) -> Result<GdmSolution> {
    check_inputs(x, y, basis, hyper)?;
    let (l1, l2) = (hyper.lambda1, hyper.lambda2);
    let d = x.ncols();
    let z = basis.residual(x)?;
    let r = basis.residual_vec(y)?;
    let s = 1.0 + l2 * y.dot(&r);

    let mut a = z.tr_mul(&z) * l1;
    for i in 0..d {
        a[(i, i)] += s;
    }
    let b = x.tr_mul(&r) * (l1 + l2);
    let j = solve_spd_vec(a, &b, "primal d×d system")?;
    let (w0, a0) = recover_covariate_terms(x, y, basis, &j)?;
    Ok(GdmSolution { j, w0, a0 })
}

/// The subject-space saddle-point system
///
/// ```text
/// M = [ −XXᵀ/s − I/λ₁   C ]
///     [  Cᵀ             0 ]
/// ```
///
/// factored by block elimination. The upper-left block `−(XXᵀ/s + I/λ₁)` is
/// negative definite, so both it and the Schur complement `Cᵀ(XXᵀ/s + I/λ₁)⁻¹C`
/// admit Cholesky factorizations.
#[derive(Debug, Clone)]
pub struct DualSystem {
    /// XXᵀ
    pub kernel: DMatrix<f64>,
    pub s: f64,
    pub hyper: GdmHyperParams,
    c: DMatrix<f64>,
    /// (XXᵀ/s + I/λ₁)⁻¹ C
    ktilde_inv_c: DMatrix<f64>,
    ktilde: DMatrix<f64>,
    schur: DMatrix<f64>,
}

impl DualSystem {
    pub fn build(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        basis: &CovariateBasis,
        hyper: &GdmHyperParams,
    ) -> Result<Self> {
        check_inputs(x, y, basis, hyper)?;
        let kernel = x * x.transpose();
        let s = generative_scalar(y, basis, hyper.lambda2)?;
        Self::from_kernel(kernel, s, basis, hyper)
    }

    pub fn from_kernel(kernel: DMatrix<f64>, s: f64, basis: &CovariateBasis, hyper: &GdmHyperParams) -> Result<Self> {
        let n = kernel.nrows();
        let mut ktilde = &kernel / s;
        for i in 0..n {
            ktilde[(i, i)] += 1.0 / hyper.lambda1;
        }
        let c = basis.matrix().clone();
        let ktilde_inv_c = solve_spd(ktilde.clone(), &c, "dual subject-space block")?;
        let schur = c.tr_mul(&ktilde_inv_c);
        Ok(Self {
            kernel,
            s,
            hyper: *hyper,
            c,
            ktilde_inv_c,
            ktilde,
            schur,
        })
    }

    pub fn n(&self) -> usize {
        self.kernel.nrows()
    }

    /// The assembled (n + k) × (n + k) matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let k = self.c.ncols();
        let mut m = DMatrix::zeros(n + k, n + k);
        m.view_mut((0, 0), (n, n)).copy_from(&(-&self.ktilde));
        m.view_mut((0, n), (n, k)).copy_from(&self.c);
        m.view_mut((n, 0), (k, n)).copy_from(&self.c.transpose());
        m
    }

    /// `B·V` where `B` is the upper-left n × n block of `M⁻¹`.
    ///
    /// Solves `M [U; T] = [V; 0]` and returns `U`.
    pub fn apply_inverse_block(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("dual block rows", self.n(), v.nrows())?;
        let kv = solve_spd(self.ktilde.clone(), v, "dual subject-space block")?;
        let t = solve_spd(self.schur.clone(), &self.c.tr_mul(&kv), "dual Schur complement")?;
        Ok(&self.ktilde_inv_c * t - kv)
    }

    /// The explicit upper-left n × n block of `M⁻¹`.
    pub fn inverse_block(&self) -> Result<DMatrix<f64>> {
        self.apply_inverse_block(&DMatrix::identity(self.n(), self.n()))
    }

    /// `I + λ₂(XXᵀP − XXᵀ)/s`, the operator applied to `Y` before the block.
    pub fn label_operator(&self, basis: &CovariateBasis) -> Result<DMatrix<f64>> {
        let n = self.n();
        let kr = basis.residual(&self.kernel.transpose())?.transpose();
        Ok(DMatrix::identity(n, n) - kr * (self.hyper.lambda2 / self.s))
    }
}

/// Dual route without the standardization check on `y`.
pub fn solve_dual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
) -> Result<GdmSolution> {
    let sys = DualSystem::build(x, y, basis, hyper)?;
    let l2 = hyper.lambda2;
    let r = basis.residual_vec(y)?;
    // (I + λ₂(XXᵀP − XXᵀ)/s)·Y = Y − λ₂·XXᵀ·RY / s
    let rhs = y - &sys.kernel * &r * (l2 / sys.s);
    let rhs = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let lambda = sys.apply_inverse_block(&rhs)?.column(0).into_owned();
    let j = x.tr_mul(&(r * l2 - lambda)) / sys.s;
    let (w0, a0) = recover_covariate_terms(x, y, basis, &j)?;
    Ok(GdmSolution { j, w0, a0 })
}

pub fn solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    route: SolverRoute,
) -> Result<GdmSolution> {
    match route {
        SolverRoute::Primal => solve_primal(x, y, basis, hyper),
        SolverRoute::Dual => solve_dual(x, y, basis, hyper),
    }
}

fn finish(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    transform: &LabelTransform,
    route: SolverRoute,
) -> Result<GdmModel> {
    ensure_standardized(y)?;
    let sol = solve(x, y, basis, hyper, route)?;
    check_finite("fitted parameters", sol.j.iter().chain(sol.w0.iter()).chain(sol.a0.iter()))?;
    #[cfg(debug_assertions)]
    {
        let c = basis.matrix();
        let obj = gdm_objective(x, y, c, &sol.j, &sol.w0, &sol.a0, hyper)?.total();
        let (gj, gw, ga) = gdm_gradient(x, y, c, &sol.j, &sol.w0, &sol.a0, hyper)?;
        let g = (gj.norm_squared() + gw.norm_squared() + ga.norm_squared()).sqrt();
        debug_assert!(
            g <= 1e-6 * (1.0 + obj),
            "first-order optimality violated: |grad| = {g:e}, objective = {obj:e}"
        );
    }
    Ok(GdmModel {
        j: sol.j,
        w0: sol.w0,
        a0: sol.a0,
        hyper: *hyper,
        label_transform: transform.clone(),
        route,
    })
}

/// Fit through the d × d primal system. `y` must be standardized.
pub fn fit_primal(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    transform: &LabelTransform,
) -> Result<GdmModel> {
    finish(x, y, basis, hyper, transform, SolverRoute::Primal)
}

/// Fit through the (n + k)-dimensional dual system. `y` must be standardized.
pub fn fit_dual(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    transform: &LabelTransform,
) -> Result<GdmModel> {
    finish(x, y, basis, hyper, transform, SolverRoute::Dual)
}

pub fn fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &CovariateBasis,
    hyper: &GdmHyperParams,
    transform: &LabelTransform,
    route: RoutePreference,
) -> Result<GdmModel> {
    let route = route.resolve(x.nrows(), x.ncols(), basis.k());
    finish(x, y, basis, hyper, transform, route)
}

/// Solutions for many `(λ₁, λ₂)` pairs on fixed data.
///
/// With the thin SVD `RX = U·S·Vᵀ` the pattern is
/// `J = V·diag((λ₁+λ₂)·σᵢ / (λ₁σᵢ² + s))·UᵀY`, so each grid point costs
/// O(d·rank) after one decomposition.
#[derive(Debug, Clone)]
pub struct GdmPath {
    v: DMatrix<f64>,
    sigma: DVector<f64>,
    uty: DVector<f64>,
    yry: f64,
    /// (CᵀC)⁻¹CᵀX, k × d
    coef_x: DMatrix<f64>,
    /// (CᵀC)⁻¹CᵀY
    coef_y: DVector<f64>,
}

impl GdmPath {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, basis: &CovariateBasis) -> Result<Self> {
        check_dims("labels", x.nrows(), y.len())?;
        check_dims("covariate rows", x.nrows(), basis.n())?;
        check_finite("features", x.iter())?;
        check_finite("labels", y.iter())?;
        let z = basis.residual(x)?;
        let r = basis.residual_vec(y)?;
        let svd = z.svd(true, true);
        let u = svd.u.ok_or(GdmError::Singular {
            context: "path SVD",
            condition: f64::INFINITY,
        })?;
        let vt = svd.v_t.ok_or(GdmError::Singular {
            context: "path SVD",
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            v: vt.transpose(),
            sigma: svd.singular_values,
            uty: u.tr_mul(y),
            yry: y.dot(&r),
            coef_x: basis.coefficients(x)?,
            coef_y: basis.coefficients_vec(y)?,
        })
    }

    pub fn pattern(&self, hyper: &GdmHyperParams) -> Result<DVector<f64>> {
        hyper.validate()?;
        let (l1, l2) = (hyper.lambda1, hyper.lambda2);
        let s = 1.0 + l2 * self.yry;
        let scaled = DVector::from_iterator(
            self.sigma.len(),
            self.sigma
                .iter()
                .zip(self.uty.iter())
                .map(|(&sg, &u)| (l1 + l2) * sg / (l1 * sg * sg + s) * u),
        );
        Ok(&self.v * scaled)
    }

    pub fn solution(&self, hyper: &GdmHyperParams) -> Result<GdmSolution> {
        let j = self.pattern(hyper)?;
        let w0 = &self.coef_y - &self.coef_x * &j;
        let a0 = (&self.coef_x - &self.coef_y * j.transpose()).transpose();
        Ok(GdmSolution { j, w0, a0 })
    }
}
