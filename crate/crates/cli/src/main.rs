//! `gdm`: fit, test and evaluate generative discriminative machines from the
//! command line.
//!
//! Every subcommand builds a [`RunConfig`], optionally starting from a JSON
//! file given with `--config`; explicit flags override the file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gdm::harness::Method;
use gdm::synth::{self, GeneratorSpec};
use gdm::workflow::{self, DataSource, InferenceChoice, Protocol, RunConfig};
use gdm::GdmError;

#[derive(Parser, Debug)]
#[command(name = "gdm", version, about = "Generative discriminative machine: fits, analytic inference and evaluation protocols")]
struct Cli {
    /// Worker threads for repeats and permutations (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model on the whole cohort and test every parameter.
    Fit(Common),
    /// Cross-validate hyperparameters only.
    Cv(Common),
    /// Repeated hold-out under a confounding case (1–4).
    Scenario {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        case: u8,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
    },
    /// Train on each site, test on the others.
    Multisite {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        resamples: usize,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
    },
    /// Write a synthetic cohort and its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Generator spec as JSON.
        #[arg(long, conflicts_with = "standard")]
        spec: Option<PathBuf>,
        /// One of the generator specs bundled with the library.
        #[arg(long)]
        standard: Option<String>,
    },
    /// Compare analytic p-values with full-refit permutation p-values.
    Permcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000, 10000])]
        budgets: Vec<usize>,
    },
    /// Summarize a report.json or multisite.json as CSV on stdout.
    Report {
        input: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum InferenceArg {
    Analytic,
    Permutation,
}

#[derive(Args, Debug)]
struct Common {
    /// Base configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort table (subject_id, label, optional site, cov_* columns, features).
    #[arg(long, conflicts_with_all = ["features", "labels"])]
    data: Option<PathBuf>,
    /// Feature table for the split input form.
    #[arg(long, requires = "labels")]
    features: Option<PathBuf>,
    /// Label table (subject_id, label) for the split input form.
    #[arg(long, requires = "features")]
    labels: Option<PathBuf>,
    /// Use a bundled synthetic cohort as input.
    #[arg(long, conflicts_with_all = ["data", "features"])]
    synthetic: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated methods for scenario and multisite.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Comma-separated λ₁ grid.
    #[arg(long, value_delimiter = ',')]
    grid_lambda1: Option<Vec<f64>>,
    /// Comma-separated λ₂ grid.
    #[arg(long, value_delimiter = ',')]
    grid_lambda2: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    inference: Option<InferenceArg>,
    #[arg(long)]
    n_perm: Option<usize>,
    #[arg(long)]
    fdr_q: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    zscore_features: bool,
    #[arg(long, env = "GDM_OUTPUT_DIR", default_value = "gdm-output")]
    output_dir: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, GdmError> {
    s.parse()
}

impl Common {
    fn into_config(self, protocol: Protocol) -> Result<RunConfig, GdmError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig {
                protocol: protocol.clone(),
                data: None,
                method: None,
                methods: Method::ALL.to_vec(),
                lambda1: None,
                lambda2: None,
                grid: None,
                inference: InferenceChoice::Analytic,
                fdr_q: 0.05,
                seed: 0,
                folds: 5,
                zscore_features: false,
                output_dir: self.output_dir.clone(),
            },
        };
        cfg.protocol = protocol;
        cfg.output_dir = self.output_dir;
        if let Some(p) = self.data {
            cfg.data = Some(DataSource::Table { path: p });
        }
        if let (Some(features), Some(labels)) = (self.features, self.labels) {
            cfg.data = Some(DataSource::Split { features, labels });
        }
        if let Some(name) = self.synthetic {
            cfg.data = Some(DataSource::Synthetic {
                spec: synth::standard_spec(&name)?,
            });
        }
        if let Some(m) = self.method {
            cfg.method = Some(parse_method(&m)?);
        }
        if let Some(ms) = self.methods {
            cfg.methods = ms.iter().map(|m| parse_method(m)).collect::<Result<_, _>>()?;
        }
        if self.lambda1.is_some() {
            cfg.lambda1 = self.lambda1;
        }
        if self.lambda2.is_some() {
            cfg.lambda2 = self.lambda2;
        }
        if self.grid_lambda1.is_some() || self.grid_lambda2.is_some() {
            let mut grid = cfg.grid.take().unwrap_or_default();
            if let Some(g) = self.grid_lambda1 {
                grid.lambda1 = g;
            }
            if let Some(g) = self.grid_lambda2 {
                grid.lambda2 = g;
            }
            cfg.grid = Some(grid);
        }
        match (self.inference, self.n_perm) {
            (Some(InferenceArg::Analytic), _) => cfg.inference = InferenceChoice::Analytic,
            (Some(InferenceArg::Permutation), n) => {
                cfg.inference = InferenceChoice::Permutation { n_perm: n.unwrap_or(1000) }
            }
            (None, Some(n)) => cfg.inference = InferenceChoice::Permutation { n_perm: n },
            (None, None) => {}
        }
        if let Some(q) = self.fdr_q {
            cfg.fdr_q = q;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        cfg.zscore_features |= self.zscore_features;
        Ok(cfg)
    }
}

fn simulate_spec(spec: Option<PathBuf>, standard: Option<String>, seed: Option<u64>) -> Result<GeneratorSpec, GdmError> {
    let mut g = match (spec, standard) {
        (Some(path), _) => serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| GdmError::Config(e.to_string()))?,
        (None, Some(name)) => synth::standard_spec(&name)?,
        (None, None) => return Err(GdmError::Config("simulate needs --spec or --standard".into())),
    };
    if let Some(s) = seed {
        g.seed = s;
    }
    Ok(g)
}

fn execute(cli: Cli) -> Result<(), GdmError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(GdmError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| GdmError::Config(e.to_string()))?;
    }
    let config = match cli.command {
        Command::Report { input } => {
            print!("{}", workflow::summarize_report(&input)?);
            return Ok(());
        }
        Command::Fit(common) => common.into_config(Protocol::Fit)?,
        Command::Cv(common) => common.into_config(Protocol::Cv)?,
        Command::Scenario { common, case, repeats } => common.into_config(Protocol::Scenario { case, repeats })?,
        Command::Multisite {
            common,
            resamples,
            train_fraction,
        } => common.into_config(Protocol::Multisite {
            resamples,
            train_fraction,
        })?,
        Command::Simulate { common, spec, standard } => {
            let g = simulate_spec(spec, standard, common.seed)?;
            common.into_config(Protocol::Simulate { spec: g })?
        }
        Command::Permcheck { common, budgets } => common.into_config(Protocol::Permcheck { budgets })?,
    };
    let outcome = workflow::run(&config)?;
    for f in outcome.files {
        println!("{}", config.output_dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
