//! Command line.
//!
//! Every invocation is described by a [`RunConfig`]. Each output file embeds
//! it together with SHA-256 hashes of the files that were read, and the
//! configuration is also written to `run_config.json` so that
//! `--config out/run_config.json` replays the run.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure |
//! | 2 | bad input: unreadable or malformed files, invalid options, shape errors |
//! | 3 | a fit diverged or did not converge (outputs are still written) |
//! | 4 | the request exceeds an enumeration cap |

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    accuracy_vs_block_distance, accuracy_vs_subset_size, accuracy_vs_test_length, artificial_benchmark, confusion_at,
    cross_validate_model, daily_accuracy_distribution, kl_divergence_smoothed, multi_information_fraction,
    noise_ratio_study, predict_panel, reconstruction_error, reversal_count_distributions, roc, sign_cross_correlation,
    CouplingSource, CvModel, FoldPlan, SmoothedKl, SCHEMA_VERSION,
};
use crate::infer::{
    fit_dichotomized_gaussian, fit_independent, fit_poisson, fit_reversal_pairwise, fit_rpml, fit_rpml_scoped,
    homogenize, DgParams, FitConfig, Penalty, RpmlScope,
};
use crate::ingest::{
    compute_reversals, compute_signs, parse_price_csv, synchronize, CsvColumns, SignPanel, ZeroPolicy,
};
use crate::model::CouplingSet;
use crate::sample::{
    exact_sample, gaussian_couplings, glauber_sample, rng_from_seed, sample_dg, stationarity_warning, GlauberConfig,
    RNG_ID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "maxent-reversal",
    version,
    about = "Pairwise maximum-entropy models of trend reversals"
)]
pub struct Cli {
    /// Seed for every random choice made by the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; all cores by default. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replay a persisted run configuration (a `run_config.json`, or any
    /// output JSON). It replaces the subcommand and its flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Everything that determines the contents of a run's outputs.
///
/// The output directory and thread count are deliberately left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum Command {
    /// Turn a long-format price CSV into sign and reversal panels.
    Ingest(IngestArgs),
    /// Fit a model to a sign panel.
    Fit(FitArgs),
    /// Flip probabilities and ROC of fitted couplings on a panel.
    Predict(PredictArgs),
    /// Run one of the evaluation studies.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic sign panel.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Long-format CSV with one row per entity and time bin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "timestamp")]
    pub timestamp_column: String,
    #[arg(long, default_value = "entity")]
    pub entity_column: String,
    #[arg(long, default_value = "open")]
    pub open_column: String,
    #[arg(long, default_value = "close")]
    pub close_column: String,
    #[arg(long, value_enum, default_value_t = ZeroArg::Positive)]
    pub zero_policy: ZeroArg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum ZeroArg {
    Positive,
    CarryForward,
}

impl From<ZeroArg> for ZeroPolicy {
    fn from(z: ZeroArg) -> Self {
        match z {
            ZeroArg::Positive => ZeroPolicy::Positive,
            ZeroArg::CarryForward => ZeroPolicy::CarryForward,
        }
    }
}

/// Options shared by every regularized fit.
#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFlags {
    /// Number of lag matrices.
    #[arg(long, default_value_t = 0)]
    pub lags: usize,
    /// Penalty strength; 1/T' for T' training bins when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `l2` or `l1`.
    #[arg(long, default_value = "l2")]
    pub penalty: Penalty,
    /// Gradient-norm tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

impl FitFlags {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            penalty: self.penalty,
            max_iterations: self.max_iter,
            gradient_tolerance: self.tol,
            seed,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Pairwise,
    Independent,
    Homogeneous,
    HistoricalOnly,
    /// Pairwise model over simultaneous reversals.
    Reversal,
    /// Dichotomized Gaussian matched to the sign moments.
    Dg,
    /// Poisson count of simultaneous reversals.
    Poisson,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArgs {
    /// Sign panel JSON.
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, value_enum, default_value_t = FitModel::Pairwise)]
    pub model: FitModel,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Coupling JSON, as written by `fit`.
    #[arg(long)]
    pub params: PathBuf,
    /// First predicted bin; the earliest bin with enough history by default.
    #[arg(long)]
    pub start: Option<usize>,
    /// One past the last predicted bin.
    #[arg(long)]
    pub end: Option<usize>,
    /// Detection level for the reported confusion matrix.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// k-fold cross-validation.
    Cv,
    /// Accuracy against the number of entities.
    Subset,
    /// Accuracy against the length of the testing block.
    Length,
    /// Accuracy against the distance from the learning block.
    Distance,
    /// Distribution of per-bin accuracy.
    Daily,
    /// Distribution of simultaneous reversals under each model.
    Reversals,
    /// KL divergence of the reversal models over random entity subsets.
    Kl,
    /// Estimation noise of homogeneous couplings.
    Noise,
    /// Coupling reconstruction error on synthetic data.
    Reconstruction,
    /// Cross-validated scores on synthetic data.
    Artificial,
    /// Lagged cross-correlation of two sign series.
    Xcorr,
    /// Share of the multi-information carried by pairwise terms.
    Multiinfo,
}

impl Study {
    fn id(&self) -> &'static str {
        match self {
            Study::Cv => "cv",
            Study::Subset => "subset",
            Study::Length => "length",
            Study::Distance => "distance",
            Study::Daily => "daily",
            Study::Reversals => "reversals",
            Study::Kl => "kl",
            Study::Noise => "noise",
            Study::Reconstruction => "reconstruction",
            Study::Artificial => "artificial",
            Study::Xcorr => "xcorr",
            Study::Multiinfo => "multiinfo",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum EvalModel {
    Pairwise,
    Independent,
    Homogeneous,
    HistoricalOnly,
}

impl From<EvalModel> for CvModel {
    fn from(m: EvalModel) -> Self {
        match m {
            EvalModel::Pairwise => CvModel::Pairwise,
            EvalModel::Independent => CvModel::Independent,
            EvalModel::Homogeneous => CvModel::Homogeneous,
            EvalModel::HistoricalOnly => CvModel::HistoricalOnly,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    /// Sign panel JSON (every study except noise, reconstruction, artificial).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Restrict the panel to these entity indices.
    #[arg(long, value_delimiter = ',')]
    pub entities: Vec<usize>,
    /// Model scored by the cv and daily studies.
    #[arg(long, value_enum, default_value_t = EvalModel::Pairwise)]
    pub model: EvalModel,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Assign bins to folds at random instead of contiguous blocks.
    #[arg(long)]
    pub shuffle_folds: bool,
    /// Detection level; the maximum-accuracy level when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Learning block length (500 for length, 1000 for distance by default).
    #[arg(long)]
    pub learning: Option<usize>,
    /// Testing block length of the distance study.
    #[arg(long, default_value_t = 40)]
    pub block: usize,
    /// Testing lengths of the length study; 30 to 500 by 10 by default.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<usize>,
    /// Number of testing blocks of the length study.
    #[arg(long, default_value_t = 8)]
    pub blocks: usize,
    /// Subset sizes (subset and kl studies).
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Subsets per size; required beyond exhaustive enumeration.
    #[arg(long)]
    pub max_subsets: Option<usize>,
    /// Entities of synthetic studies.
    #[arg(long)]
    pub n: Option<usize>,
    /// Records of synthetic studies.
    #[arg(long)]
    pub t: Option<usize>,
    /// Several record counts for the reconstruction study.
    #[arg(long, value_delimiter = ',')]
    pub ts: Vec<usize>,
    /// Mean coupling of synthetic studies.
    #[arg(long, default_value_t = 0.21)]
    pub j_mean: f64,
    /// Coupling spread of synthetic studies.
    #[arg(long)]
    pub sigma_j: Option<f64>,
    /// Generating couplings of synthetic studies.
    #[arg(long)]
    pub coupling_file: Option<PathBuf>,
    /// First entity of the xcorr study.
    #[arg(long, default_value_t = 0)]
    pub i: usize,
    /// Second entity of the xcorr study.
    #[arg(long, default_value_t = 1)]
    pub j: usize,
    #[arg(long, default_value_t = 10)]
    pub max_lag: usize,
    /// Draws used to estimate the dichotomized Gaussian counts.
    #[arg(long, default_value_t = 200_000)]
    pub dg_samples: usize,
    /// Discarded records before synthetic panels are recorded.
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Number of entities (with `--homogeneous`).
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of recorded configurations.
    #[arg(long)]
    pub t: usize,
    /// Coupling JSON to sample from.
    #[arg(long, conflicts_with_all = ["homogeneous", "dg_params"])]
    pub coupling_file: Option<PathBuf>,
    /// Equal couplings J between every pair, zero fields.
    #[arg(long, conflicts_with = "dg_params")]
    pub homogeneous: Option<f64>,
    /// Dichotomized Gaussian parameters (as written by `fit --model dg`).
    #[arg(long)]
    pub dg_params: Option<PathBuf>,
    /// Independent draws from the enumerated distribution instead of Glauber dynamics.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Flip attempts per Monte Carlo step; 5N by default.
    #[arg(long)]
    pub sweep: Option<usize>,
    /// Monte Carlo steps between recorded configurations.
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Validation(_)
        | Error::InsufficientData(_)
        | Error::Shape(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_INPUT,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Capacity { .. } => EXIT_CAPACITY,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(&cli) {
        Ok(Status::Converged) => EXIT_OK,
        Ok(Status::NotConverged) => {
            eprintln!("error: a fit did not reach its tolerance; outputs were written anyway");
            EXIT_DIVERGENCE
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

impl Status {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Converged
        } else {
            Status::NotConverged
        }
    }
}

/// Resolves the run configuration and executes it.
pub fn run(cli: &Cli) -> Result<Status> {
    let config = match &cli.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: cli.seed,
            command: cli
                .command
                .clone()
                .ok_or_else(|| Error::Validation("a subcommand or --config is required".into()))?,
        },
    };
    execute(&config, &cli.out)
}

/// Reads a `RunConfig`, either standalone or embedded under `run_config`.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let bytes = read_file(path)?;
    let mut value: serde_json::Value = serde_json::from_slice(&bytes)?;
    if let Some(inner) = value.get_mut("run_config") {
        value = inner.take();
    }
    let config: RunConfig = serde_json::from_value(value)?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(Error::Validation(format!(
            "run config has schema version {}, this build writes {SCHEMA_VERSION}",
            config.schema_version
        )));
    }
    Ok(config)
}

/// Runs `config` writing into `out`.
pub fn execute(config: &RunConfig, out: &Path) -> Result<Status> {
    let mut ctx = Context {
        config: config.clone(),
        out: out.to_path_buf(),
        inputs: Vec::new(),
    };
    let seed = config.seed;
    match &config.command {
        Command::Ingest(a) => cmd_ingest(&mut ctx, a),
        Command::Fit(a) => cmd_fit(&mut ctx, a, seed),
        Command::Predict(a) => cmd_predict(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a, seed),
        Command::Simulate(a) => cmd_simulate(&mut ctx, a, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    schema_version: u32,
    run_config: &'a RunConfig,
    inputs: &'a [InputHash],
    #[serde(flatten)]
    body: T,
}

struct Context {
    config: RunConfig,
    out: PathBuf,
    inputs: Vec<InputHash>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Context {
    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_file(path)?;
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.clone(),
            source,
        })?;
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|source| Error::Io { path, source })
    }

    fn write_run_config(&self) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.config)?;
        bytes.push(b'\n');
        self.write("run_config.json", &bytes)
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let doc = Document {
            schema_version: SCHEMA_VERSION,
            run_config: &self.config,
            inputs: &self.inputs,
            body,
        };
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// CSV with a leading `#` line carrying the schema version, run config and input hashes.
    fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<()> {
        let inputs: Vec<String> = self
            .inputs
            .iter()
            .map(|i| format!("{}={}", i.path.display(), i.sha256))
            .collect();
        let mut buf = format!(
            "# schema_version={SCHEMA_VERSION} run_config={} inputs=[{}]\n",
            serde_json::to_string(&self.config)?,
            inputs.join(";")
        )
        .into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(|source| Error::Io {
                path: self.out.join(name),
                source,
            })?;
        }
        self.write(name, &buf)
    }

    fn load_panel(&mut self, path: &Path) -> Result<SignPanel> {
        let bytes = self.read_input(path)?;
        load_panel_bytes(&bytes)
    }

    fn load_couplings(&mut self, path: &Path) -> Result<CouplingSet> {
        let bytes = self.read_input(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Parses a sign panel JSON document (extra fields are ignored) and validates it.
pub fn load_panel_bytes(bytes: &[u8]) -> Result<SignPanel> {
    let panel: SignPanel = serde_json::from_slice(bytes)?;
    panel.validate()?;
    Ok(panel)
}

/// Reads and validates a sign panel JSON file.
pub fn load_panel(path: &Path) -> Result<SignPanel> {
    load_panel_bytes(&read_file(path)?)
}

#[derive(Serialize)]
struct IngestReport {
    n_entities: usize,
    raw_bins: usize,
    synchronized_bins: usize,
    dropped_bins: usize,
    zero_returns: usize,
    zero_policy: ZeroArg,
    mean_signs: Vec<f64>,
}

fn cmd_ingest(ctx: &mut Context, a: &IngestArgs) -> Result<Status> {
    let bytes = ctx.read_input(&a.input)?;
    let text =
        String::from_utf8(bytes).map_err(|e| Error::Validation(format!("{} is not UTF-8: {e}", a.input.display())))?;
    let columns = CsvColumns {
        timestamp: a.timestamp_column.clone(),
        entity: a.entity_column.clone(),
        open: a.open_column.clone(),
        close: a.close_column.clone(),
    };
    let raw = parse_price_csv(&text, &columns)?;
    let synced = synchronize(&raw)?;
    let conv = compute_signs(&synced, a.zero_policy.into())?;
    let reversals = compute_reversals(&conv.panel)?;
    ctx.write_run_config()?;
    ctx.write_json("signs.json", &conv.panel)?;
    ctx.write_json("reversals.json", &reversals)?;
    ctx.write_json(
        "ingest_report.json",
        IngestReport {
            n_entities: conv.panel.n_entities(),
            raw_bins: raw.n_bins(),
            synchronized_bins: synced.n_bins(),
            dropped_bins: raw.n_bins() - synced.n_bins(),
            zero_returns: conv.zero_returns,
            zero_policy: a.zero_policy,
            mean_signs: conv.panel.mean_signs(),
        },
    )?;
    Ok(Status::Converged)
}

#[derive(Serialize)]
struct ParamsBody<P: Serialize> {
    model: FitModel,
    #[serde(flatten)]
    params: P,
}

#[derive(Serialize)]
struct FitSummary {
    model: FitModel,
    n_entities: usize,
    n_bins: usize,
    lags: usize,
    converged: bool,
    iterations_used: usize,
    gradient_norm: f64,
    objective_trace: Vec<f64>,
    config: Option<FitConfig>,
    optimizer: String,
    warnings: Vec<String>,
}

fn cmd_fit(ctx: &mut Context, a: &FitArgs, seed: u64) -> Result<Status> {
    let panel = ctx.load_panel(&a.panel)?;
    let config = a.fit.config(seed);
    let mut summary = FitSummary {
        model: a.model,
        n_entities: panel.n_entities(),
        n_bins: panel.n_bins(),
        lags: 0,
        converged: true,
        iterations_used: 0,
        gradient_norm: 0.0,
        objective_trace: Vec::new(),
        config: None,
        optimizer: "closed form".into(),
        warnings: Vec::new(),
    };
    macro_rules! absorb {
        ($report:expr) => {{
            let r = $report;
            summary.converged = r.converged;
            summary.iterations_used = r.iterations_used;
            summary.gradient_norm = r.gradient_norm;
            summary.objective_trace = r.objective_trace.clone();
            summary.config = Some(r.config);
            summary.optimizer = r.optimizer.clone();
            summary.warnings = r.warnings.clone();
            r.params
        }};
    }
    ctx.write_run_config()?;
    match a.model {
        FitModel::Pairwise | FitModel::Homogeneous | FitModel::HistoricalOnly | FitModel::Independent => {
            let params = match a.model {
                FitModel::Pairwise => {
                    summary.lags = a.fit.lags;
                    absorb!(fit_rpml(&panel, a.fit.lags, &config)?)
                }
                FitModel::Homogeneous => homogenize(&absorb!(fit_rpml(&panel, 0, &config)?))?,
                FitModel::HistoricalOnly => {
                    summary.lags = a.fit.lags;
                    let scope = RpmlScope {
                        instantaneous: false,
                        ..RpmlScope::default()
                    };
                    absorb!(fit_rpml_scoped(&panel, a.fit.lags, &config, &scope)?)
                }
                _ => fit_independent(&panel),
            };
            ctx.write_json("couplings.json", ParamsBody { model: a.model, params })?;
        }
        FitModel::Reversal => {
            let rev = compute_reversals(&panel)?;
            let params = absorb!(fit_reversal_pairwise(&rev, &config)?);
            ctx.write_json("couplings.json", ParamsBody { model: a.model, params })?;
        }
        FitModel::Dg => {
            let fit = fit_dichotomized_gaussian(&panel)?;
            summary.warnings = fit.warnings.clone();
            if fit.projected {
                summary
                    .warnings
                    .push("latent correlation matrix projected onto the PSD cone".into());
            }
            ctx.write_json(
                "couplings.json",
                ParamsBody {
                    model: a.model,
                    params: fit.params,
                },
            )?;
        }
        FitModel::Poisson => {
            let params = fit_poisson(&compute_reversals(&panel)?)?;
            ctx.write_json("couplings.json", ParamsBody { model: a.model, params })?;
        }
    }
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    let status = Status::from_bool(summary.converged);
    ctx.write_json("fit_report.json", summary)?;
    Ok(status)
}

#[derive(Serialize)]
struct RocRow {
    threshold: f64,
    tpr: f64,
    fpr: f64,
    accuracy: f64,
}

fn roc_rows(r: &crate::eval::RocResult) -> Vec<RocRow> {
    (0..r.thresholds.len())
        .map(|k| RocRow {
            threshold: r.thresholds[k],
            tpr: r.tpr[k],
            fpr: r.fpr[k],
            accuracy: r.accuracy_curve[k].1,
        })
        .collect()
}

#[derive(Serialize)]
struct PredictSummary {
    start: usize,
    end: usize,
    n_records: usize,
    n_positive: usize,
    auc: f64,
    max_accuracy: f64,
    best_alpha: f64,
    alpha: Option<f64>,
    confusion: Option<crate::eval::Confusion>,
}

fn cmd_predict(ctx: &mut Context, a: &PredictArgs) -> Result<Status> {
    let panel = ctx.load_panel(&a.panel)?;
    let params = ctx.load_couplings(&a.params)?;
    let start = a.start.unwrap_or(params.n_lags().max(1));
    let end = a.end.unwrap_or(panel.n_bins());
    if start >= end || end > panel.n_bins() {
        return Err(Error::Validation(format!(
            "bin range {start}..{end} is empty or beyond the panel's {} bins",
            panel.n_bins()
        )));
    }
    let run = predict_panel(&panel, &params, start..end)?;
    ctx.write_run_config()?;
    ctx.write_csv("predictions.csv", &run.records)?;
    let curve = roc(&run)?;
    ctx.write_csv("roc.csv", &roc_rows(&curve))?;
    let confusion = a.alpha.map(|alpha| confusion_at(&run, alpha)).transpose()?;
    ctx.write_json(
        "predict.json",
        PredictSummary {
            start,
            end,
            n_records: run.len(),
            n_positive: run.n_positive(),
            auc: curve.auc,
            max_accuracy: curve.max_accuracy,
            best_alpha: curve.best_alpha,
            alpha: a.alpha,
            confusion,
        },
    )?;
    Ok(Status::Converged)
}

#[derive(Serialize)]
struct FoldRow {
    fold: usize,
    n_train: usize,
    n_test: usize,
    first_bin: usize,
    last_bin: usize,
    converged: bool,
    auc: f64,
    max_accuracy: f64,
    best_alpha: f64,
    accuracy_at_half: f64,
}

#[derive(Serialize)]
struct CountRow {
    count: usize,
    empirical: f64,
    pairwise: f64,
    poisson: f64,
    dg: f64,
    dg_standard_error: f64,
}

#[derive(Serialize)]
struct KlSet {
    pairwise: SmoothedKl,
    poisson: SmoothedKl,
    dg: SmoothedKl,
}

#[derive(Serialize)]
struct ReversalBody {
    distributions: crate::eval::CountDistributions,
    kl: KlSet,
    converged: bool,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct KlSubset {
    k: usize,
    entities: Vec<usize>,
    pairwise: f64,
    poisson: f64,
    dg: f64,
    converged: bool,
}

#[derive(Serialize)]
struct KlRow {
    k: usize,
    n_subsets: usize,
    mean_pairwise: f64,
    sd_pairwise: f64,
    mean_poisson: f64,
    sd_poisson: f64,
    mean_dg: f64,
    sd_dg: f64,
}

#[derive(Serialize)]
struct KlBody {
    rows: Vec<KlRow>,
    subsets: Vec<KlSubset>,
}

#[derive(Serialize)]
struct ReconstructionRow {
    t: usize,
    reconstruction_error: f64,
    converged: bool,
}

#[derive(Serialize)]
struct ReconstructionBody {
    truth: CouplingSet,
    rows: Vec<ReconstructionRow>,
}

#[derive(Serialize)]
struct ArtificialRow {
    n: usize,
    t: usize,
    seed: u64,
    mean_accuracy: f64,
    mean_auc: f64,
    reconstruction_error: f64,
}

#[derive(Serialize)]
struct MultiInfoRow {
    n: usize,
    n_bins: usize,
    s_empirical: f64,
    s_independent: f64,
    s_pairwise: f64,
    multi_information: f64,
    pairwise_information: f64,
    fraction: Option<f64>,
    tolerance: f64,
}

#[derive(Serialize)]
struct Rows<R: Serialize> {
    rows: Vec<R>,
}

/// Pairwise, Poisson and dichotomized Gaussian reversal-count models of a sign panel.
fn reversal_models(panel: &SignPanel, config: &FitConfig, dg_samples: usize, dg_seed: u64) -> Result<ReversalBody> {
    let rev = compute_reversals(panel)?;
    let w = fit_reversal_pairwise(&rev, config)?;
    let poisson = fit_poisson(&rev)?;
    let dg = fit_dichotomized_gaussian(&rev.as_sign_panel())?;
    let dist = reversal_count_distributions(&rev, &w.params, &poisson, &dg.params, dg_samples, dg_seed)?;
    let t = rev.n_bins();
    let kl = KlSet {
        pairwise: kl_divergence_smoothed(&dist.empirical, &dist.pairwise, t)?,
        poisson: kl_divergence_smoothed(&dist.empirical, &dist.poisson, t)?,
        dg: kl_divergence_smoothed(&dist.empirical, &dist.dg, t)?,
    };
    let mut warnings = w.warnings;
    warnings.extend(dg.warnings);
    Ok(ReversalBody {
        distributions: dist,
        kl,
        converged: w.converged,
        warnings,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    (
        crate::eval::mean(values.iter().copied()),
        crate::eval::sample_sd(values),
    )
}

fn cmd_evaluate(ctx: &mut Context, a: &EvaluateArgs, seed: u64) -> Result<Status> {
    let config = a.fit.config(seed);
    let glauber = GlauberConfig {
        burn_in_records: a.burn_in,
        seed,
        ..GlauberConfig::default()
    };
    let panel = match (&a.panel, a.study) {
        (_, Study::Noise | Study::Reconstruction | Study::Artificial) => None,
        (Some(p), _) => {
            let full = ctx.load_panel(p)?;
            Some(if a.entities.is_empty() {
                full
            } else {
                if let Some(&bad) = a.entities.iter().find(|&&e| e >= full.n_entities()) {
                    return Err(Error::Validation(format!(
                        "entity {bad} outside a panel of {} entities",
                        full.n_entities()
                    )));
                }
                full.select_entities(&a.entities)
            })
        }
        (None, s) => return Err(Error::Validation(format!("study {} needs --panel", s.id()))),
    };
    let coupling_file = match &a.coupling_file {
        Some(p) => Some(ctx.load_couplings(p)?),
        None => None,
    };
    let json_name = format!("study_{}.json", a.study.id());
    let csv_name = format!("study_{}.csv", a.study.id());
    ctx.write_run_config()?;
    let panel_ref = || panel.as_ref().expect("panel loaded for this study");
    let cv = |panel: &SignPanel| -> Result<crate::eval::CvResult> {
        let model: CvModel = a.model.into();
        let lags = model.effective_lags(a.fit.lags);
        let plan = if a.shuffle_folds {
            FoldPlan::shuffled(lags.max(1)..panel.n_bins(), a.folds, seed)?
        } else {
            FoldPlan::for_panel(panel.n_bins(), lags, a.folds)?
        };
        cross_validate_model(panel, model, a.fit.lags, &config, &plan)
    };

    let converged = match a.study {
        Study::Cv => {
            let result = cv(panel_ref())?;
            let rows: Vec<FoldRow> = result
                .folds
                .iter()
                .map(|f| FoldRow {
                    fold: f.fold,
                    n_train: f.n_train,
                    n_test: f.n_test,
                    first_bin: f.first_bin,
                    last_bin: f.last_bin,
                    converged: f.converged,
                    auc: f.auc,
                    max_accuracy: f.max_accuracy,
                    best_alpha: f.best_alpha,
                    accuracy_at_half: f.accuracy_at_half,
                })
                .collect();
            ctx.write_csv(&csv_name, &rows)?;
            ctx.write_csv("study_cv_curve.csv", &result.mean_curve)?;
            ctx.write_json(&json_name, &result)?;
            result.folds.iter().all(|f| f.converged)
        }
        Study::Subset => {
            let n = panel_ref().n_entities();
            let ks: Vec<usize> = if a.ks.is_empty() {
                (1..=n).collect()
            } else {
                a.ks.clone()
            };
            let study = accuracy_vs_subset_size(panel_ref(), &ks, &config, a.folds, a.max_subsets, seed)?;
            ctx.write_csv(&csv_name, &study.rows)?;
            ctx.write_json(&json_name, &study)?;
            true
        }
        Study::Length => {
            let lengths: Vec<usize> = if a.lengths.is_empty() {
                (30..=500).step_by(10).collect()
            } else {
                a.lengths.clone()
            };
            let study = accuracy_vs_test_length(
                panel_ref(),
                a.learning.unwrap_or(500),
                &lengths,
                a.blocks,
                a.fit.lags,
                &config,
                a.alpha,
            )?;
            ctx.write_csv(&csv_name, &study.rows)?;
            ctx.write_json(&json_name, &study)?;
            true
        }
        Study::Distance => {
            let study = accuracy_vs_block_distance(
                panel_ref(),
                a.learning.unwrap_or(1000),
                a.block,
                a.fit.lags,
                &config,
                a.alpha,
            )?;
            ctx.write_csv(&csv_name, &study.blocks)?;
            ctx.write_json(&json_name, &study)?;
            true
        }
        Study::Daily => {
            let result = cv(panel_ref())?;
            let daily = daily_accuracy_distribution(&result.pooled, a.alpha)?;
            ctx.write_csv(&csv_name, &daily.per_bin)?;
            ctx.write_json(&json_name, &daily)?;
            result.folds.iter().all(|f| f.converged)
        }
        Study::Reversals => {
            let body = reversal_models(panel_ref(), &config, a.dg_samples, seed)?;
            let d = &body.distributions;
            let rows: Vec<CountRow> = (0..=d.n)
                .map(|c| CountRow {
                    count: c,
                    empirical: d.empirical[c],
                    pairwise: d.pairwise[c],
                    poisson: d.poisson[c],
                    dg: d.dg[c],
                    dg_standard_error: d.dg_standard_error[c],
                })
                .collect();
            ctx.write_csv(&csv_name, &rows)?;
            let ok = body.converged;
            ctx.write_json(&json_name, &body)?;
            ok
        }
        Study::Kl => {
            let panel = panel_ref();
            let n = panel.n_entities();
            let ks: Vec<usize> = if a.ks.is_empty() {
                let even: Vec<usize> = [4, 6, 8, 10].into_iter().filter(|&k| k <= n).collect();
                if even.is_empty() {
                    vec![n]
                } else {
                    even
                }
            } else {
                a.ks.clone()
            };
            if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
                return Err(Error::Validation(format!("subset size {bad} outside 1..={n}")));
            }
            let per_k = a.max_subsets.unwrap_or(10);
            let mut rng = rng_from_seed(seed);
            let mut draws = Vec::new();
            for &k in &ks {
                for _ in 0..per_k {
                    let mut idx = sample_indices(&mut rng, n, k).into_vec();
                    idx.sort_unstable();
                    draws.push((k, idx));
                }
            }
            let subsets: Vec<KlSubset> = draws
                .into_par_iter()
                .enumerate()
                .map(|(pos, (k, idx))| {
                    let body = reversal_models(
                        &panel.select_entities(&idx),
                        &config,
                        a.dg_samples,
                        seed.wrapping_add(1 + pos as u64),
                    )?;
                    Ok(KlSubset {
                        k,
                        entities: idx,
                        pairwise: body.kl.pairwise.value,
                        poisson: body.kl.poisson.value,
                        dg: body.kl.dg.value,
                        converged: body.converged,
                    })
                })
                .collect::<Result<_>>()?;
            let rows: Vec<KlRow> = ks
                .iter()
                .map(|&k| {
                    let of =
                        |f: fn(&KlSubset) -> f64| -> Vec<f64> { subsets.iter().filter(|s| s.k == k).map(f).collect() };
                    let (mp, sp) = mean_sd(&of(|s| s.pairwise));
                    let (mq, sq) = mean_sd(&of(|s| s.poisson));
                    let (md, sd) = mean_sd(&of(|s| s.dg));
                    KlRow {
                        k,
                        n_subsets: per_k,
                        mean_pairwise: mp,
                        sd_pairwise: sp,
                        mean_poisson: mq,
                        sd_poisson: sq,
                        mean_dg: md,
                        sd_dg: sd,
                    }
                })
                .collect();
            ctx.write_csv(&csv_name, &rows)?;
            let ok = subsets.iter().all(|s| s.converged);
            ctx.write_json(&json_name, KlBody { rows, subsets })?;
            ok
        }
        Study::Noise => {
            let study = noise_ratio_study(
                a.n.unwrap_or(8),
                a.t.unwrap_or(2500),
                a.j_mean,
                a.sigma_j,
                &config,
                &glauber,
            )?;
            ctx.write_csv(&csv_name, std::slice::from_ref(&study))?;
            ctx.write_json(&json_name, &study)?;
            true
        }
        Study::Reconstruction => {
            let truth = match coupling_file {
                Some(c) => c,
                None => gaussian_couplings(
                    a.n.unwrap_or(8),
                    a.j_mean,
                    a.sigma_j.unwrap_or(0.08),
                    &mut rng_from_seed(seed),
                ),
            };
            let ts = if a.ts.is_empty() {
                vec![a.t.unwrap_or(2500)]
            } else {
                a.ts.clone()
            };
            let rows: Vec<ReconstructionRow> = ts
                .iter()
                .map(|&t| {
                    let panel = glauber_sample(&truth, t, &glauber)?;
                    let fit = fit_rpml(&panel, truth.n_lags(), &config)?;
                    Ok(ReconstructionRow {
                        t,
                        reconstruction_error: reconstruction_error(&truth, &fit.params)?,
                        converged: fit.converged,
                    })
                })
                .collect::<Result<_>>()?;
            ctx.write_csv(&csv_name, &rows)?;
            let ok = rows.iter().all(|r| r.converged);
            ctx.write_json(&json_name, ReconstructionBody { truth, rows })?;
            ok
        }
        Study::Artificial => {
            let (n, source) = match coupling_file {
                Some(c) => (c.n(), CouplingSource::Params(c)),
                None => (a.n.unwrap_or(8), CouplingSource::Homogeneous { j_mean: a.j_mean }),
            };
            let t = a.t.unwrap_or(2500);
            let result = artificial_benchmark(n, t, &source, &config, a.folds, &glauber)?;
            let row = ArtificialRow {
                n,
                t,
                seed,
                mean_accuracy: result.mean_accuracy,
                mean_auc: result.mean_auc,
                reconstruction_error: result.reconstruction_error,
            };
            ctx.write_csv(&csv_name, &[row])?;
            ctx.write_json(&json_name, &result)?;
            true
        }
        Study::Xcorr => {
            let rows = sign_cross_correlation(panel_ref(), a.i, a.j, a.max_lag)?;
            ctx.write_csv(&csv_name, &rows)?;
            ctx.write_json(&json_name, Rows { rows })?;
            true
        }
        Study::Multiinfo => {
            let m = multi_information_fraction(panel_ref())?;
            let row = MultiInfoRow {
                n: m.n,
                n_bins: m.n_bins,
                s_empirical: m.s_empirical,
                s_independent: m.s_independent,
                s_pairwise: m.s_pairwise,
                multi_information: m.multi_information,
                pairwise_information: m.pairwise_information,
                fraction: m.fraction,
                tolerance: m.tolerance,
            };
            ctx.write_csv(&csv_name, &[row])?;
            ctx.write_json(&json_name, &m)?;
            true
        }
    };
    Ok(Status::from_bool(converged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// `glauber`, `exact` or `dichotomized_gaussian`.
    pub generator: String,
    pub rng: String,
    /// SHA-256 of the compact JSON of the generating parameters.
    pub params_sha256: String,
    pub burn_in_records: Option<usize>,
    pub attempts_per_sweep: Option<usize>,
    pub sweeps_per_record: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct SimulatedPanel<'a> {
    #[serde(flatten)]
    panel: &'a SignPanel,
    provenance: Provenance,
}

fn cmd_simulate(ctx: &mut Context, a: &SimulateArgs, seed: u64) -> Result<Status> {
    if a.t == 0 {
        return Err(Error::Validation("--t must be positive".into()));
    }
    let (panel, mut provenance) = if let Some(path) = &a.dg_params {
        let bytes = ctx.read_input(path)?;
        let params: DgParams = serde_json::from_slice(&bytes)?;
        params.validate()?;
        let panel = sample_dg(&params, a.t, seed)?;
        (
            panel,
            Provenance {
                seed,
                generator: "dichotomized_gaussian".into(),
                rng: RNG_ID.into(),
                params_sha256: sha256_hex(&serde_json::to_vec(&params)?),
                burn_in_records: None,
                attempts_per_sweep: None,
                sweeps_per_record: None,
                warnings: Vec::new(),
            },
        )
    } else {
        let params = match (&a.coupling_file, a.homogeneous) {
            (Some(path), _) => ctx.load_couplings(path)?,
            (None, Some(j)) => {
                let n = a.n.ok_or_else(|| Error::Validation("--homogeneous needs --n".into()))?;
                CouplingSet::homogeneous(n, j)
            }
            (None, None) => {
                return Err(Error::Validation(
                    "one of --coupling-file, --homogeneous or --dg-params is required".into(),
                ))
            }
        };
        if let Some(n) = a.n {
            if n != params.n() {
                return Err(Error::Shape(format!(
                    "--n {n} but the couplings have N = {}",
                    params.n()
                )));
            }
        }
        let params_sha256 = sha256_hex(&serde_json::to_vec(&params)?);
        if a.exact {
            (
                exact_sample(&params, a.t, seed)?,
                Provenance {
                    seed,
                    generator: "exact".into(),
                    rng: RNG_ID.into(),
                    params_sha256,
                    burn_in_records: None,
                    attempts_per_sweep: None,
                    sweeps_per_record: None,
                    warnings: Vec::new(),
                },
            )
        } else {
            let cfg = GlauberConfig {
                sweeps_per_record: a.record_every,
                attempts_per_sweep: a.sweep,
                burn_in_records: a.burn_in,
                seed,
            };
            (
                glauber_sample(&params, a.t, &cfg)?,
                Provenance {
                    seed,
                    generator: "glauber".into(),
                    rng: RNG_ID.into(),
                    params_sha256,
                    burn_in_records: Some(cfg.burn_in_records),
                    attempts_per_sweep: Some(cfg.attempts(params.n())),
                    sweeps_per_record: Some(cfg.sweeps_per_record),
                    warnings: Vec::new(),
                },
            )
        }
    };
    if let Some(w) = stationarity_warning(&panel) {
        log::warn!("{w}");
        provenance.warnings.push(w);
    }
    ctx.write_run_config()?;
    ctx.write_json(
        "panel.json",
        SimulatedPanel {
            panel: &panel,
            provenance,
        },
    )?;
    Ok(Status::Converged)
}
