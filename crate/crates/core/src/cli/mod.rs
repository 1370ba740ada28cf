//! Command-line front end: `gen`, `fit`, `bench` and `corr`.
//!
//! `fit` and `bench` write line-oriented `key = value` records under a
//! `# dckm-result v1` / `# dckm-bench v1` header. Floats are printed with 17
//! significant digits. Wall-clock time goes to stdout only, so result files
//! from identical invocations are byte-identical.

mod record;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{self, DEFAULT_DROP_THRESHOLD};
use crate::data::{self, BiasSpec, LabelColumn, LabeledDataset};
use crate::error::DckmError;
use crate::metrics::{self, ari, nmi};
use crate::solver::fit_restarts;
use crate::types::{DataMatrix, HyperParams, SampleWeights};

pub use record::{BenchCell, BenchTable, Record, RunRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Environment variable that overrides the default `--seed`.
pub const SEED_ENV: &str = "DCKM_SEED";

/// Default λ grid for `bench`.
pub const LAMBDA_GRID: [f64; 6] = [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

#[derive(Debug, Parser)]
#[command(name = "dckm", version, about = "Decorrelation-regularized k-means")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic binary dataset with selection bias.
    Gen(GenArgs),
    /// Fit one method and write a result record.
    Fit(FitArgs),
    /// Compare methods over datasets and a λ grid.
    Bench(BenchArgs),
    /// Report the amount of feature correlation, optionally weighted.
    Corr(CorrArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 24)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Core features per cluster [default: d / 8, at least 1].
    #[arg(long)]
    pub core: Option<usize>,
    /// Number of bias features [default: d / 3]. Columns left after the core
    /// and bias blocks are filler noise.
    #[arg(long)]
    pub bias_features: Option<usize>,
    /// Probability that a bias feature fires for its linked cluster.
    #[arg(long = "bias", default_value_t = 0.9)]
    pub bias_strength: f64,
    #[arg(long = "noise", default_value_t = 0.03)]
    pub noise_flip: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl GenArgs {
    pub fn spec(&self) -> BiasSpec {
        let core = self.core.unwrap_or((self.d / 8).max(1));
        let bias_features = self.bias_features.unwrap_or(self.d / 3);
        BiasSpec {
            n: self.n,
            d: self.d,
            k: self.k,
            core_per_cluster: core,
            bias_features,
            bias_strength: self.bias_strength,
            noise_flip: self.noise_flip,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Dckm,
    Kmeans,
    Deckm,
    Pcakm,
    Dropkm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dckm => "dckm",
            Method::Kmeans => "kmeans",
            Method::Deckm => "deckm",
            Method::Pcakm => "pcakm",
            Method::Dropkm => "dropkm",
        }
    }

    fn uses_lambdas(self) -> bool {
        matches!(self, Method::Dckm | Method::Deckm)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Label column (name or 0-based index); excluded from the features.
    #[arg(long)]
    pub labels: Option<String>,
    /// Quantile-binarize non-binary columns into this many bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub l1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l3: f64,
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub w_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Correlation threshold for dropkm.
    #[arg(long, default_value_t = DEFAULT_DROP_THRESHOLD)]
    pub threshold: f64,
    /// Projection dimension for pcakm [default: k - 1].
    #[arg(long)]
    pub pca_dims: Option<usize>,
}

impl SolverArgs {
    pub fn hyper_params(&self, l1: f64, l2: f64) -> HyperParams {
        HyperParams {
            lambda1: l1,
            lambda2: l2,
            lambda3: self.l3,
            k: self.k,
            max_outer_iters: self.max_iters,
            max_w_iters: self.w_iters,
            outer_tol: self.tol,
            grad_step: self.step,
            seed: self.seed,
            restarts: self.restarts,
            ..HyperParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Result record path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the learned sample weights (dckm, deckm) here.
    #[arg(long)]
    pub weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub data: Vec<PathBuf>,
    #[arg(long, num_args = 0.., value_delimiter = ',', value_enum, default_values_t = [Method::Kmeans, Method::Dckm])]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
    pub l1_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = LAMBDA_GRID)]
    pub l2_grid: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub input: DataArgs,
    /// Weights file written by `fit --weights-out`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<DckmError> for CliError {
    fn from(e: DckmError) -> Self {
        let code = match &e {
            DckmError::InvalidParam(_) => EXIT_USAGE,
            DckmError::EmptyCluster { .. } | DckmError::DegenerateGroup { .. } => EXIT_SOLVER,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Corr(args) => cmd_corr(&args),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| DckmError::Io { path: path.to_path_buf(), source }.into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let spec = args.spec();
    spec.validate()?;
    let ds = data::generate_biased(&spec)?;
    data::save_dataset(&ds, &args.out)?;
    println!("wrote {} rows x {} features to {}", ds.x.n(), ds.x.d(), args.out.display());
    for (k, v) in &ds.provenance {
        println!("{k} = {v}");
    }
    Ok(())
}

/// Loads a dataset the way `fit`, `bench` and `corr` do.
pub fn load_input(path: &Path, input: &DataArgs) -> CliResult<LabeledDataset> {
    let label = input.labels.as_deref().map(LabelColumn::parse);
    let mut ds = data::load_csv(path, label.as_ref())?;
    if let Some(bins) = input.bins {
        let (x, meta) = data::binarize(ds.x.view(), bins)?;
        ds.provenance.push(("binarized_bins".into(), bins.to_string()));
        ds.provenance.push(("binarized_features".into(), meta.columns.len().to_string()));
        ds.x = x;
        ds.feature_names = None;
    }
    Ok(ds)
}

/// Outcome of one method on one dataset: one labeling per restart plus the
/// summary fields of the selected run.
struct MethodRun {
    seeds: Vec<u64>,
    labelings: Vec<Vec<usize>>,
    objective: f64,
    iterations: usize,
    converged: bool,
    weights: Option<SampleWeights>,
    kept_features: Option<usize>,
}

fn run_method(method: Method, x: &DataMatrix, solver: &SolverArgs, hp: &HyperParams) -> CliResult<MethodRun> {
    if solver.restarts == 0 {
        return Err(CliError::usage("--restarts must be at least 1"));
    }
    hp.validate()?;
    let seeds: Vec<u64> = (0..solver.restarts).map(|r| solver.seed.wrapping_add(r as u64)).collect();
    if method == Method::Dckm {
        let report = fit_restarts(x, hp)?;
        return Ok(MethodRun {
            seeds,
            labelings: report.runs.iter().map(|r| r.labels.clone()).collect(),
            objective: report.best.final_objective(),
            iterations: report.best.iterations,
            converged: report.best.converged,
            weights: Some(report.best.weights),
            kept_features: None,
        });
    }

    let view = x.view();
    let (weights, kept) = match method {
        Method::Deckm => (Some(baselines::dec_km_weights(x, hp)?), None),
        Method::Dropkm => (None, Some(baselines::select_uncorrelated(view, solver.threshold)?)),
        _ => (None, None),
    };
    let spec = baselines::BaselineSpec {
        drop_threshold: solver.threshold,
        pca_dims: solver.pca_dims,
        ..baselines::BaselineSpec::new(baselines::BaselineKind::KMeans)
    };
    spec.validate(x.d())?;
    let fits = crate::par::map_slice(&seeds, |&seed| -> crate::Result<baselines::KMeansFit> {
        match method {
            Method::Kmeans => baselines::kmeans(view, hp.k, seed),
            Method::Deckm => baselines::weighted_kmeans(view, weights.as_ref().expect("weights"), hp.k, seed),
            Method::Pcakm => {
                let dims = solver.pca_dims.unwrap_or(hp.k.saturating_sub(1).max(1));
                Ok(baselines::pca_km_with_dims(view, hp.k, dims, seed)?.kmeans)
            }
            Method::Dropkm => {
                let keep = kept.as_ref().expect("kept features");
                let reduced = view.select(ndarray::Axis(1), keep);
                baselines::kmeans(reduced.view(), hp.k, seed)
            }
            Method::Dckm => unreachable!("handled above"),
        }
    });
    let fits: Vec<baselines::KMeansFit> = fits.into_iter().collect::<crate::Result<_>>()?;
    let best = crate::solver::best_run(fits.iter().map(baselines::KMeansFit::loss));
    Ok(MethodRun {
        seeds,
        labelings: fits.iter().map(|f| f.assignments.labels().to_vec()).collect(),
        objective: fits[best].loss(),
        iterations: fits[best].iterations(),
        converged: fits[best].converged,
        weights,
        kept_features: kept.map(|k| k.len()),
    })
}

fn build_record(
    method: Method,
    data_path: &Path,
    ds: &LabeledDataset,
    hp: &HyperParams,
    run: &MethodRun,
) -> CliResult<RunRecord> {
    let mut nmis = Vec::new();
    let mut aris = Vec::new();
    if let Some(truth) = &ds.labels {
        for labels in &run.labelings {
            nmis.push(nmi(truth, labels)?);
            aris.push(ari(truth, labels)?);
        }
    }
    let x = ds.x.view();
    Ok(RunRecord {
        method: method.name().to_string(),
        data: data_path.display().to_string(),
        n: ds.x.n(),
        d: ds.x.d(),
        hyper: hp.clone(),
        seeds: run.seeds.clone(),
        nmi: nmis,
        ari: aris,
        objective: run.objective,
        iterations: run.iterations,
        converged: run.converged,
        corr_before: metrics::correlation_amount(x, None),
        corr_after: run.weights.as_ref().map(|w| metrics::correlation_amount(x, Some(w))),
        kept_features: run.kept_features,
    })
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let ds = load_input(&args.data, &args.input)?;
    let hp = args.solver.hyper_params(args.solver.l1, args.solver.l2);
    let start = Instant::now();
    let run = run_method(args.method, &ds.x, &args.solver, &hp)?;
    let elapsed = start.elapsed();
    let record = build_record(args.method, &args.data, &ds, &hp, &run)?;
    if let Some(path) = &args.weights_out {
        let w = run
            .weights
            .as_ref()
            .ok_or_else(|| CliError::usage(format!("{} learns no sample weights", args.method.name())))?;
        write_weights(path, w)?;
    }
    write_or_print(args.out.as_deref(), &record.render())?;
    if args.out.is_some() {
        if let (Some(m), Some(a)) = (record.mean_nmi(), record.mean_ari()) {
            println!("{}: mean NMI {m:.4}, mean ARI {a:.4}", record.method);
        }
    }
    println!("wall_time_s = {:.3}", elapsed.as_secs_f64());
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    if args.methods.is_empty() {
        return Err(CliError::usage("--methods needs at least one method"));
    }
    if args.l1_grid.is_empty() || args.l2_grid.is_empty() {
        return Err(CliError::usage("λ grids must not be empty"));
    }
    let mut table = BenchTable {
        datasets: args.data.iter().map(|p| p.display().to_string()).collect(),
        methods: args.methods.iter().map(|m| m.name().to_string()).collect(),
        cells: Vec::new(),
    };
    for path in &args.data {
        let ds = match load_input(path, &args.input) {
            Ok(ds) => Some(ds),
            Err(e) => {
                log::warn!("{}: {}", path.display(), e.message);
                for &method in &args.methods {
                    table.cells.push(BenchCell::failed(path, method.name(), e.message.clone()));
                }
                None
            }
        };
        let Some(ds) = ds else { continue };
        if ds.labels.is_none() {
            return Err(CliError::usage(format!("{}: bench needs --labels", path.display())));
        }
        for &method in &args.methods {
            let grid: Vec<(f64, f64)> = if method.uses_lambdas() {
                args.l1_grid.iter().flat_map(|&a| args.l2_grid.iter().map(move |&b| (a, b))).collect()
            } else {
                vec![(args.solver.l1, args.solver.l2)]
            };
            let mut best: Option<RunRecord> = None;
            let mut errors = Vec::new();
            for (l1, l2) in grid {
                let hp = args.solver.hyper_params(l1, l2);
                let outcome = run_method(method, &ds.x, &args.solver, &hp)
                    .and_then(|run| build_record(method, path, &ds, &hp, &run));
                match outcome {
                    Ok(rec) => {
                        let better = best.as_ref().is_none_or(|b| {
                            rec.mean_nmi().unwrap_or(f64::NEG_INFINITY) > b.mean_nmi().unwrap_or(f64::NEG_INFINITY)
                        });
                        if better {
                            best = Some(rec);
                        }
                    }
                    Err(e) => errors.push(format!("l1={l1} l2={l2}: {}", e.message)),
                }
            }
            table.cells.push(BenchCell {
                dataset: path.display().to_string(),
                method: method.name().into(),
                best,
                errors,
            });
        }
    }
    let text = table.render();
    write_or_print(args.out.as_deref(), &text)?;
    if args.out.is_some() {
        print!("{}", table.summary());
    }
    Ok(())
}

pub fn cmd_corr(args: &CorrArgs) -> CliResult<()> {
    let ds = load_input(&args.data, &args.input)?;
    let x = ds.x.view();
    let before = metrics::correlation_amount(x, None);
    println!("unweighted = {}", record::fmt_f64(before));
    if let Some(path) = &args.weights {
        let w = read_weights(path)?;
        if w.len() != ds.x.n() {
            return Err(DckmError::ShapeMismatch(format!("{} weights for {} samples", w.len(), ds.x.n())).into());
        }
        let after = metrics::correlation_amount(x, Some(&w));
        println!("weighted = {}", record::fmt_f64(after));
        println!("ratio = {}", record::fmt_f64(after / before));
    }
    Ok(())
}

pub const WEIGHTS_HEADER: &str = "# dckm-weights v1";

pub fn write_weights(path: &Path, w: &SampleWeights) -> CliResult<()> {
    let mut text = String::from(WEIGHTS_HEADER);
    text.push('\n');
    for v in w.w() {
        text.push_str(&record::fmt_f64(*v));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| DckmError::Io { path: path.to_path_buf(), source }.into())
}

pub fn read_weights(path: &Path) -> CliResult<SampleWeights> {
    let text = fs::read_to_string(path).map_err(|source| DckmError::Io { path: path.to_path_buf(), source })?;
    let mut w = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| DckmError::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: format!("not a number: {line:?}"),
        })?;
        w.push(v);
    }
    Ok(SampleWeights::from_weights(ndarray::Array1::from(w))?)
}
