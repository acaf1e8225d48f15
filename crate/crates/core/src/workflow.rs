//! Config-driven runs shared by the command-line tool and the Python module.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{ridge_null, RidgeModel};
use crate::error::{GdmError, Result};
use crate::harness::{self, EvalOptions, FittedModel, HyperChoice, HyperGrid, Method, ScenarioSpec};
use crate::inference::{
    analytic_inference, analytic_pvalues, bh_fdr, permutation_pvalues, pvalue_agreement, AgreementCurve, InferenceMethod,
    InferenceResult, PermutationMode,
};
use crate::io;
use crate::model::{Cohort, CovariateBasis, FeatureScaler, LabelTransform, ResidualizerFit, DEFAULT_RANK_TOL};
use crate::seeds;
use crate::solver::GdmHyperParams;
use crate::synth::{self, GeneratorSpec};

/// Where the cohort comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// One CSV with id, label, optional site, `cov_*` and feature columns.
    Table { path: PathBuf },
    /// Features (with optional covariates/site) and labels in separate CSVs.
    Split { features: PathBuf, labels: PathBuf },
    /// Generated on the fly.
    Synthetic { spec: GeneratorSpec },
}

impl DataSource {
    pub fn load(&self) -> Result<Cohort> {
        match self {
            DataSource::Table { path } => io::load_cohort(path),
            DataSource::Split { features, labels } => io::load_split(features, labels),
            DataSource::Synthetic { spec } => Ok(synth::generate(spec)?.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceChoice {
    Analytic,
    Permutation { n_perm: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Fit one model on the whole cohort and test its parameters.
    Fit,
    /// Inner cross-validation only.
    Cv,
    /// Repeated hold-out under one confounding case.
    Scenario { case: u8, repeats: usize },
    /// Train on one site, test on the others.
    Multisite {
        resamples: usize,
        #[serde(default = "default_site_fraction")]
        train_fraction: f64,
    },
    /// Write a synthetic cohort and its ground truth.
    Simulate { spec: GeneratorSpec },
    /// Agreement of analytic and permutation p-values across budgets.
    Permcheck { budgets: Vec<usize> },
}

fn default_site_fraction() -> f64 {
    0.9
}

fn default_q() -> f64 {
    0.05
}

fn default_folds() -> usize {
    5
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_inference() -> InferenceChoice {
    InferenceChoice::Analytic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    /// Required by every protocol except `simulate`.
    #[serde(default)]
    pub data: Option<DataSource>,
    /// Method for `fit` and `cv`.
    #[serde(default)]
    pub method: Option<Method>,
    /// Methods compared by `scenario` and `multisite`.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Fixed λ₁; with `lambda2` this skips cross-validation in `fit`.
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    #[serde(default)]
    pub grid: Option<HyperGrid>,
    #[serde(default = "default_inference")]
    pub inference: InferenceChoice,
    #[serde(default = "default_q")]
    pub fdr_q: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub zscore_features: bool,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GdmError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fdr_q > 0.0 && self.fdr_q < 1.0) {
            return Err(GdmError::Config(format!("fdr_q out of range: {} (must lie in (0, 1))", self.fdr_q)));
        }
        if let Some(l) = self.lambda1 {
            GdmHyperParams::new(l, 0.0).map_err(|e| GdmError::Config(e.to_string()))?;
        }
        if let Some(l) = self.lambda2 {
            GdmHyperParams::new(1.0, l).map_err(|e| GdmError::Config(e.to_string()))?;
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        if self.folds < 2 {
            return Err(GdmError::Config("folds must be at least 2".into()));
        }
        if let InferenceChoice::Permutation { n_perm } = self.inference {
            if n_perm == 0 {
                return Err(GdmError::Config("n_perm must be positive".into()));
            }
        }
        match &self.protocol {
            Protocol::Simulate { spec } => spec.validate().map_err(|e| GdmError::Config(e.to_string()))?,
            _ if self.data.is_none() => {
                return Err(GdmError::Config("this protocol needs a 'data' section".into()));
            }
            Protocol::Scenario { case, repeats } => {
                ScenarioSpec::case(*case, self.seed)?;
                if *repeats < 2 {
                    return Err(GdmError::Config("repeats must be at least 2".into()));
                }
            }
            Protocol::Multisite { resamples, train_fraction } => {
                if *resamples < 2 || !(*train_fraction > 0.0 && *train_fraction <= 1.0) {
                    return Err(GdmError::Config("multisite needs resamples ≥ 2 and train_fraction in (0, 1]".into()));
                }
            }
            Protocol::Permcheck { budgets } => {
                if budgets.is_empty() || budgets.contains(&0) {
                    return Err(GdmError::Config("permcheck budgets must be positive".into()));
                }
            }
            Protocol::Fit | Protocol::Cv => {}
        }
        if self.methods.is_empty() {
            return Err(GdmError::Config("methods must be nonempty".into()));
        }
        Ok(())
    }

    /// Evaluation options implied by the config. Fixed λ values collapse
    /// the grid to a single point.
    pub fn eval_options(&self) -> EvalOptions {
        let mut grid = self.grid.clone().unwrap_or_default();
        if let Some(l) = self.lambda1 {
            grid.lambda1 = vec![l];
        }
        if let Some(l) = self.lambda2 {
            grid.lambda2 = vec![l];
        }
        EvalOptions {
            grid,
            folds: self.folds,
            zscore_features: self.zscore_features,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    fn method(&self) -> Method {
        self.method.unwrap_or(Method::Gdm)
    }
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub files: Vec<String>,
}

/// Envelope around every JSON output: the resolved configuration, the
/// version and seed, and the result itself. `timestamp` is the only field
/// that differs between identical runs.
#[derive(Debug, Clone, Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    seed: u64,
    /// Seconds since the epoch; taken from `SOURCE_DATE_EPOCH` when set.
    timestamp: u64,
    config: &'a RunConfig,
    result: &'a T,
}

fn write_report<T: Serialize>(path: &Path, config: &RunConfig, result: &T) -> Result<()> {
    io::write_json(
        path,
        &Envelope {
            version: crate::VERSION,
            seed: config.seed,
            timestamp: timestamp(),
            config,
            result,
        },
    )
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Execute a run, writing every output under `config.output_dir`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let out = &config.output_dir;
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        files.push(name.to_string());
        out.join(name)
    };

    match &config.protocol {
        Protocol::Simulate { spec } => {
            let (cohort, truth) = synth::generate(spec)?;
            io::save_cohort(&cohort, &emit("cohort.csv"))?;
            write_report(&emit("truth.json"), config, &truth)?;
        }
        Protocol::Fit => {
            let cohort = load(config)?;
            let fit = fit_and_test(&cohort, config)?;
            io::write_parameter_table(&emit("parameters.csv"), &cohort.feature_names, fit.map_name, &fit.map.into())?;
            if let Some((w0, a0, names)) = &fit.covariate_terms {
                io::write_covariate_terms(&emit("w0.csv"), &emit("a0.csv"), names, &cohort.feature_names, w0, a0)?;
            }
            if let Some(inf) = &fit.inference {
                io::write_inference_table(&emit("inference.csv"), &cohort.feature_names, inf)?;
            }
            write_report(&emit("fit.json"), config, &fit.summary)?;
        }
        Protocol::Cv => {
            let cohort = load(config)?;
            let cv = harness::cross_validate(&cohort, config.method(), &config.eval_options(), seeds::derive(config.seed, 1))?;
            write_report(&emit("cv.json"), config, &cv)?;
        }
        Protocol::Scenario { case, repeats } => {
            let cohort = load(config)?;
            let spec = ScenarioSpec::case(*case, config.seed)?;
            let reports = harness::repeated_holdout(&cohort, &spec, &config.methods, *repeats, config.seed, &config.eval_options())?;
            write_report(&emit("report.json"), config, &reports)?;
        }
        Protocol::Multisite { resamples, train_fraction } => {
            let cohort = load(config)?;
            let report = harness::multi_site_protocol(&cohort, &config.methods, *resamples, *train_fraction, config.seed, &config.eval_options())?;
            write_report(&emit("multisite.json"), config, &report)?;
        }
        Protocol::Permcheck { budgets } => {
            let cohort = load(config)?;
            let hyper = GdmHyperParams::new(config.lambda1.unwrap_or(1.0), config.lambda2.unwrap_or(1.0))?;
            let study = agreement_study(&cohort, &hyper, budgets, config.seed)?;
            io::write_agreement(&emit("agreement.csv"), &study.curve)?;
            write_report(&emit("agreement.json"), config, &study.curve)?;
        }
    }
    Ok(RunOutcome { files })
}

fn load(config: &RunConfig) -> Result<Cohort> {
    config
        .data
        .as_ref()
        .ok_or_else(|| GdmError::Config("missing 'data' section".into()))?
        .load()
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub method: Method,
    pub choice: HyperChoice,
    pub cv_accuracy: Option<f64>,
    pub n: usize,
    pub d: usize,
    pub covariates: Vec<String>,
    pub inference: Option<InferenceMethod>,
    pub fdr_q: f64,
    pub n_rejected: Option<usize>,
}

/// A fitted model with its parameter map and (when available) per-feature
/// tests.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub map_name: &'static str,
    pub map: Vec<f64>,
    pub covariate_terms: Option<(nalgebra::DVector<f64>, nalgebra::DMatrix<f64>, Vec<String>)>,
    pub inference: Option<InferenceResult>,
    pub summary: FitSummary,
}

/// Fit the configured method on the whole cohort (cross-validating λ unless
/// fixed) and, for GDM and ridge, test every parameter.
pub fn fit_and_test(cohort: &Cohort, config: &RunConfig) -> Result<FitOutput> {
    let method = config.method();
    let options = config.eval_options();
    let cv = harness::cross_validate(cohort, method, &options, seeds::derive(config.seed, 1))?;
    let trained = harness::fit_method(cohort, method, cv.best, &options)?;

    let x = match &trained.scaler {
        Some(s) => s.apply(&cohort.features)?,
        None => cohort.features.clone(),
    };
    let (y, _) = LabelTransform::fit(&cohort.labels)?;
    let basis = CovariateBasis::build(&cohort.covariates, &cohort.covariate_names, options.rank_tol)?;

    let (map_name, covariate_terms, inference) = match &trained.model {
        FittedModel::Gdm(m) => {
            let hyper = cv.best.gdm()?;
            let inf = match config.inference {
                InferenceChoice::Analytic => analytic_inference(&x, &y, &basis, &hyper, config.fdr_q)?,
                InferenceChoice::Permutation { n_perm } => {
                    let r = permutation_pvalues(&x, &y, &basis, &hyper, n_perm, seeds::derive(config.seed, 2), PermutationMode::FullRefit)?;
                    InferenceResult {
                        rejected: bh_fdr(&r.p, config.fdr_q)?,
                        statistic: r.observed,
                        sigma: r.perm_std,
                        p_raw: r.p,
                        q_level: config.fdr_q,
                        method: InferenceMethod::Permutation,
                        n_permutations: Some(r.n_permutations),
                        zero_sigma: Vec::new(),
                    }
                }
            };
            (
                "J",
                Some((m.w0.clone(), m.a0.clone(), basis.column_names().to_vec())),
                Some(inf),
            )
        }
        FittedModel::Ridge(m) => {
            if let InferenceChoice::Permutation { .. } = config.inference {
                return Err(GdmError::Config("permutation inference is implemented for gdm only".into()));
            }
            ("w", None, Some(ridge_inference(m, &x, &basis, &y, config.fdr_q)?))
        }
        FittedModel::Haufe(_) => ("a", None, None),
    };
    let summary = FitSummary {
        method,
        choice: cv.best,
        cv_accuracy: cv.best_accuracy,
        n: cohort.n(),
        d: cohort.d(),
        covariates: cohort.covariate_names.clone(),
        inference: inference.as_ref().map(|i| i.method),
        fdr_q: config.fdr_q,
        n_rejected: inference.as_ref().map(|i| i.rejected.iter().filter(|r| **r).count()),
    };
    Ok(FitOutput {
        map_name,
        map: trained.map().iter().copied().collect(),
        covariate_terms,
        inference,
        summary,
    })
}

fn ridge_inference(
    model: &RidgeModel,
    x: &nalgebra::DMatrix<f64>,
    basis: &CovariateBasis,
    _y: &nalgebra::DVector<f64>,
    q: f64,
) -> Result<InferenceResult> {
    let resid = ResidualizerFit::fit(x, basis)?;
    let x_res = resid.apply(x, basis.matrix())?;
    let null = ridge_null(&x_res, model.lambda)?;
    let pv = analytic_pvalues(&model.w, &null)?;
    Ok(InferenceResult {
        rejected: bh_fdr(&pv.p, q)?,
        statistic: model.w.iter().copied().collect(),
        sigma: null.sigma.iter().copied().collect(),
        p_raw: pv.p,
        q_level: q,
        method: InferenceMethod::Analytic,
        n_permutations: None,
        zero_sigma: pv.zero_sigma,
    })
}

/// Analytic p-values next to full-refit permutation p-values at several
/// budgets.
#[derive(Debug, Clone)]
pub struct AgreementStudy {
    pub p_analytic: Vec<f64>,
    pub p_permutation: BTreeMap<usize, Vec<f64>>,
    pub curve: AgreementCurve,
}

/// Each budget uses its own permutation stream derived from `seed`.
pub fn agreement_study(cohort: &Cohort, hyper: &GdmHyperParams, budgets: &[usize], seed: u64) -> Result<AgreementStudy> {
    let (y, _) = LabelTransform::fit(&cohort.labels)?;
    let basis = CovariateBasis::build(&cohort.covariates, &cohort.covariate_names, DEFAULT_RANK_TOL)?;
    let analytic = analytic_inference(&cohort.features, &y, &basis, hyper, 0.05)?;
    let mut p_permutation = BTreeMap::new();
    for &b in budgets {
        let r = permutation_pvalues(&cohort.features, &y, &basis, hyper, b, seeds::derive(seed, b as u64), PermutationMode::FullRefit)?;
        p_permutation.insert(b, r.p);
    }
    let curve = pvalue_agreement(&analytic.p_raw, &p_permutation)?;
    Ok(AgreementStudy {
        p_analytic: analytic.p_raw,
        p_permutation,
        curve,
    })
}

/// Plot-ready CSV summary (`train_site,test_site,method,mean_accuracy,
/// std_accuracy,mean_reproducibility,std_reproducibility`) of a
/// `report.json` or `multisite.json` written by [`run`].
pub fn summarize_report(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let result = value
        .get("result")
        .ok_or_else(|| GdmError::InvalidArgument(format!("{} has no 'result' field", path.display())))?;
    let rows: Vec<(String, String, harness::EvalReport)> = if let Some(entries) = result.get("entries") {
        serde_json::from_value::<Vec<harness::CrossSiteEntry>>(entries.clone())?
            .into_iter()
            .map(|e| (e.train_site, e.test_site, e.report))
            .collect()
    } else {
        serde_json::from_value::<Vec<harness::EvalReport>>(result.clone())
            .map_err(|_| GdmError::InvalidArgument(format!("{} is not an evaluation report", path.display())))?
            .into_iter()
            .map(|r| (String::new(), String::new(), r))
            .collect()
    };
    let mut out = String::from("train_site,test_site,method,mean_accuracy,std_accuracy,mean_reproducibility,std_reproducibility\n");
    for (train, test, r) in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{train},{test},{},{},{},{},{}\n",
            r.method_id,
            io::format_f64(s.mean_accuracy),
            io::format_f64(s.std_accuracy),
            io::format_f64(s.mean_reproducibility),
            io::format_f64(s.std_reproducibility)
        ));
    }
    Ok(out)
}

/// Z-score helper exposed for callers that pre-scale features themselves.
pub fn zscore(cohort: &Cohort) -> Result<Cohort> {
    let s = FeatureScaler::fit(&cohort.features);
    let mut out = cohort.clone();
    out.features = s.apply(&cohort.features)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(protocol: Protocol, dir: &Path) -> RunConfig {
        RunConfig {
            protocol,
            data: Some(DataSource::Synthetic {
                spec: GeneratorSpec {
                    n_per_site: vec![40],
                    d: 12,
                    effect_pattern: synth::EffectPattern::Sparse { count: 3 },
                    effect_amplitude: 1.0,
                    seed: 2,
                    ..Default::default()
                },
            }),
            method: None,
            methods: Method::ALL.to_vec(),
            lambda1: Some(1.0),
            lambda2: Some(1.0),
            grid: None,
            inference: InferenceChoice::Analytic,
            fdr_q: 0.05,
            seed: 3,
            folds: 5,
            zscore_features: false,
            output_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn fdr_q_out_of_range_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Protocol::Fit, dir.path());
        c.fdr_q = 1.5;
        let e = run(&c).unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("fdr_q out of range"));
    }

    #[test]
    fn fit_writes_tables() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&config(Protocol::Fit, dir.path())).unwrap();
        for f in ["parameters.csv", "w0.csv", "a0.csv", "inference.csv", "fit.json"] {
            assert!(out.files.iter().any(|x| x == f), "{f}");
            assert!(dir.path().join(f).exists());
        }
        let text = std::fs::read_to_string(dir.path().join("inference.csv")).unwrap();
        assert!(text.starts_with("feature_name,J,sigma,p,q_rejected\n"));
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn config_json_round_trip() {
        let c = config(Protocol::Scenario { case: 4, repeats: 10 }, Path::new("out"));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert!(RunConfig::from_json(r#"{"protocol":{"kind":"fit"},"output_dir":"x","bogus":1}"#).is_err());
    }

    #[test]
    fn scenario_report_summarizes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(Protocol::Scenario { case: 1, repeats: 2 }, dir.path());
        if let Some(DataSource::Synthetic { spec }) = &mut c.data {
            spec.n_per_site = vec![120];
        }
        run(&c).unwrap();
        let text = summarize_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with(",,gdm,"));
    }

    #[test]
    fn missing_data_is_rejected() {
        let mut c = config(Protocol::Cv, Path::new("out"));
        c.data = None;
        assert!(c.validate().is_err());
    }
}
