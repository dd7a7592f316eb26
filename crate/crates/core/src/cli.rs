//! Command-line front end: generate, build, simulate, validate, info.
//!
//! Every artifact written to `<path>` is accompanied by `<stem>.config.json`
//! holding the fully resolved configuration. Module errors print one line
//! `error[CODE]: message` and exit 1; usage errors exit 2.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::dmaps::KernelConfig;
use crate::error::{Error, Result};
use crate::generators::{self, EgressConfig, PdeConfig, SpiralConfig};
use crate::interp::Method;
use crate::model::{self, ModelConfig, NumericalModel, Scheme, StepRule};
use crate::timeseries::{self, Format, InputPoint, TrajectoryBundle};
use crate::validate::{self, ChanceConfig, ConvergenceConfig, InjectedErrors};

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "CLOSEDOBS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "closedobs", version, about = "Closed-observable numerical models from observation time series")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a training bundle from a built-in generator.
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Build a model from a training bundle.
    Build(BuildArgs),
    /// Simulate a model from one initial input.
    Simulate(SimulateArgs),
    /// Run a validation study and write its report.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Print the dimensions, spectrum, and node counts of a model.
    Info(InfoArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Damped rotation from a grid of initial states, observing the radius.
    Spiral(SpiralArgs),
    /// Periodic transport-diffusion profiles over a grid of (c, d) coefficients.
    Pde(PdeArgs),
    /// Stochastic train egress runs over a grid of initial counts.
    Egress(EgressArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct BundleOut {
    #[arg(long)]
    pub out: PathBuf,
    /// Bundle format; guessed from the extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

impl BundleOut {
    fn format(&self) -> Format {
        match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Json) => Format::Json,
            None => Format::from_path(&self.out),
        }
    }
}

#[derive(Debug, Args)]
pub struct SpiralArgs {
    /// Points per axis for both axes; overridden by `--nx` and `--ny`.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long, num_args = 2, value_delimiter = ',', allow_hyphen_values = true)]
    pub x_range: Option<Vec<f64>>,
    #[arg(long, num_args = 2, value_delimiter = ',', allow_hyphen_values = true)]
    pub y_range: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[command(flatten)]
    pub output: BundleOut,
}

#[derive(Debug, Args)]
pub struct PdeArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub c_values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub d_values: Option<Vec<f64>>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub transport_factor: Option<f64>,
    #[command(flatten)]
    pub output: BundleOut,
}

#[derive(Debug, Args)]
pub struct EgressArgs {
    #[arg(long, value_delimiter = ',')]
    pub train_counts: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    pub platform_counts: Option<Vec<u32>>,
    #[arg(long)]
    pub runs_per_pair: Option<usize>,
    #[arg(long)]
    pub duration: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub door_rate_base: Option<f64>,
    #[arg(long)]
    pub congestion_coefficient: Option<f64>,
    #[arg(long)]
    pub platform_capacity: Option<f64>,
    /// Write the per-pair mean trajectories instead of the individual runs.
    #[arg(long)]
    pub average_runs: bool,
    #[command(flatten)]
    pub output: BundleOut,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Library defaults.
    Default,
    /// Settings for run-averaged egress data.
    Egress,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    OneSided,
    Central,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepRuleArg {
    Increment,
    Flow,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Model configuration JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "config")]
    pub preset: Option<Preset>,
    /// Average repeated runs sharing an input before building.
    #[arg(long)]
    pub average_runs: bool,
    /// Delay horizon T.
    #[arg(long)]
    pub delay: Option<usize>,
    /// Fixed kernel bandwidth.
    #[arg(long, conflicts_with = "epsilon_median_factor")]
    pub epsilon: Option<f64>,
    /// Bandwidth as a multiple of the median pairwise distance.
    #[arg(long)]
    pub epsilon_median_factor: Option<f64>,
    #[arg(long)]
    pub lambda_ratio: Option<f64>,
    #[arg(long)]
    pub dependency_residual: Option<f64>,
    /// Neighbourhood size of the coordinate dependency test.
    #[arg(long)]
    pub truncation_neighbors: Option<usize>,
    #[arg(long)]
    pub landmark_stride: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    pub step_rule: Option<StepRuleArg>,
    #[arg(long)]
    pub flow_substeps: Option<usize>,
    #[arg(long)]
    pub extrapolation_factor: Option<f64>,
    /// Method for all three maps: nearest, shepard[:K[:P]], local_linear[:K[:P]], rbf:SHAPE:RIDGE.
    #[arg(long, value_parser = parse_method)]
    pub interp: Option<Method>,
    #[arg(long, value_parser = parse_method)]
    pub input_interp: Option<Method>,
    #[arg(long, value_parser = parse_method)]
    pub dynamic_interp: Option<Method>,
    #[arg(long, value_parser = parse_method)]
    pub observer_interp: Option<Method>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Initial input, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x0: Vec<f64>,
    #[arg(long)]
    pub steps: usize,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportOut {
    /// JSON report path; the CSV goes next to it with extension `.csv`.
    /// Without it the JSON report goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ValidateCommand {
    /// Error order of the one-sided and central schemes on the spiral.
    Convergence(ConvergenceArgs),
    /// Full-grid storage of the reduced model against tabulating every series.
    Storage(StorageArgs),
    /// Error growth of a scalar contraction with injected interpolation errors.
    Bound(BoundArgs),
    /// Relative prediction error per step against reference trajectories.
    Holdout(HoldoutArgs),
    /// Chance-of-exit surfaces of an egress model.
    Egress(EgressAnalysisArgs),
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    /// Study configuration JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub step_counts: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: ReportOut,
}

#[derive(Debug, Args)]
pub struct StorageArgs {
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub m: u32,
    #[arg(long)]
    pub n0: u32,
    /// Nodes per axis.
    #[arg(long = "N")]
    pub nodes_per_axis: u64,
    #[command(flatten)]
    pub output: ReportOut,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Contraction factor M in (0, 1).
    #[arg(long)]
    pub contraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub e_dynamic: f64,
    #[arg(long, default_value_t = 0.0)]
    pub e_input: f64,
    #[arg(long, default_value_t = 0.0)]
    pub e_observer: f64,
    #[arg(long, default_value_t = 50)]
    pub n_max: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: ReportOut,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Bundle of held-out trajectories.
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub output: ReportOut,
}

#[derive(Debug, Args)]
pub struct EgressAnalysisArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Horizons in model steps.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub train_counts: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub platform_counts: Option<Vec<f64>>,
    #[command(flatten)]
    pub output: ReportOut,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub model: PathBuf,
}

/// Parse `nearest`, `shepard[:K[:P]]`, `local_linear[:K[:P]]`, or
/// `rbf:SHAPE:RIDGE`; `K` may be `auto`.
pub fn parse_method(text: &str) -> std::result::Result<Method, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |i: usize, default: f64| -> std::result::Result<f64, String> {
        parts.get(i).map_or(Ok(default), |s| s.parse().map_err(|_| format!("bad number {s:?} in {text:?}")))
    };
    let neighbors = || -> std::result::Result<Option<usize>, String> {
        match parts.get(1) {
            None | Some(&"auto") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| format!("bad neighbor count {s:?} in {text:?}")),
        }
    };
    let method = match (parts[0], parts.len()) {
        ("nearest", 1) => Method::Nearest,
        ("shepard", 1..=3) => Method::Shepard {
            neighbors: neighbors()?,
            power: num(2, 2.0)?,
        },
        ("local_linear", 1..=3) => Method::LocalLinear {
            neighbors: neighbors()?,
            power: num(2, 2.0)?,
        },
        ("rbf", 3) => Method::RbfGaussian {
            shape: num(1, 0.0)?,
            ridge: num(2, 0.0)?,
        },
        _ => return Err(format!("unknown interpolation method {text:?}")),
    };
    method.validate().map_err(|e| e.to_string())?;
    Ok(method)
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate(cmd) => generate(cmd),
        Command::Build(args) => build(args),
        Command::Simulate(args) => simulate(args),
        Command::Validate(cmd) => validate_cmd(cmd),
        Command::Info(args) => info(args),
    })
}

/// `<dir>/<stem>.config.json` for an artifact at `path`.
pub fn provenance_path(path: &Path) -> PathBuf {
    path.with_extension("config.json")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Corrupt(format!("json encoding: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Resolved configuration stored next to an artifact.
fn write_provenance(artifact: &Path, command: &str, config: Value, inputs: Value) -> Result<()> {
    let record = json!({
        "tool": "closedobs",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "inputs": inputs,
    });
    write_file(&provenance_path(artifact), &to_json(&record)?)
}

fn value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Corrupt(format!("json encoding: {e}")))
}

fn load_bundle(path: &Path) -> Result<TrajectoryBundle> {
    timeseries::load_bundle(path, Format::from_path(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: format!("{}: {e}", path.display()),
    })
}

fn range(values: Option<Vec<f64>>, default: [f64; 2]) -> [f64; 2] {
    values.map_or(default, |v| [v[0], v[1]])
}

fn generate(cmd: GenerateCommand) -> Result<()> {
    match cmd {
        GenerateCommand::Spiral(a) => {
            let base = a.grid.map_or_else(SpiralConfig::default, SpiralConfig::grid);
            let cfg = SpiralConfig {
                x_range: range(a.x_range, base.x_range),
                y_range: range(a.y_range, base.y_range),
                nx: a.nx.unwrap_or(base.nx),
                ny: a.ny.unwrap_or(base.ny),
                dt: a.dt.unwrap_or(base.dt),
                t_end: a.t_end.unwrap_or(base.t_end),
            };
            let bundle = generators::gen_spiral(&cfg)?;
            save_generated(&bundle, &a.output, "generate spiral", value(&cfg)?)
        }
        GenerateCommand::Pde(a) => {
            let base = PdeConfig::default();
            let cfg = PdeConfig {
                c_values: a.c_values.unwrap_or(base.c_values),
                d_values: a.d_values.unwrap_or(base.d_values),
                nx: a.nx.unwrap_or(base.nx),
                dt: a.dt.unwrap_or(base.dt),
                t_end: a.t_end.unwrap_or(base.t_end),
                transport_factor: a.transport_factor.unwrap_or(base.transport_factor),
            };
            let bundle = generators::gen_transport_diffusion(&cfg)?;
            save_generated(&bundle, &a.output, "generate pde", value(&cfg)?)
        }
        GenerateCommand::Egress(a) => {
            let base = EgressConfig::default();
            let cfg = EgressConfig {
                train_counts: a.train_counts.unwrap_or(base.train_counts),
                platform_counts: a.platform_counts.unwrap_or(base.platform_counts),
                runs_per_pair: a.runs_per_pair.unwrap_or(base.runs_per_pair),
                duration: a.duration.unwrap_or(base.duration),
                seed: a.seed.unwrap_or(base.seed),
                door_rate_base: a.door_rate_base.unwrap_or(base.door_rate_base),
                congestion_coefficient: a.congestion_coefficient.unwrap_or(base.congestion_coefficient),
                platform_capacity: a.platform_capacity.unwrap_or(base.platform_capacity),
            };
            let mut bundle = generators::gen_egress(&cfg)?;
            if a.average_runs {
                bundle = timeseries::average_runs(&bundle)?;
            }
            let mut config = value(&cfg)?;
            config["average_runs"] = json!(a.average_runs);
            save_generated(&bundle, &a.output, "generate egress", config)
        }
    }
}

fn save_generated(bundle: &TrajectoryBundle, out: &BundleOut, command: &str, config: Value) -> Result<()> {
    timeseries::save_bundle(bundle, &out.out, out.format())?;
    log::info!("wrote {} trajectories to {}", bundle.len(), out.out.display());
    let inputs = json!({ "bundle_hash": timeseries::content_hash(bundle)? });
    write_provenance(&out.out, command, config, inputs)
}

/// Start from the config file or preset, then apply each given flag.
pub fn resolve_model_config(a: &BuildArgs) -> Result<ModelConfig> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => read_json(path)?,
        (None, Some(Preset::Egress)) => validate::egress_model_config(),
        (None, _) => ModelConfig::default(),
    };
    if let Some(t) = a.delay {
        cfg.horizon = t;
    }
    if let Some(epsilon) = a.epsilon {
        cfg.kernel = KernelConfig::Fixed { epsilon };
    }
    if let Some(factor) = a.epsilon_median_factor {
        cfg.kernel = KernelConfig::MedianScaled { factor };
    }
    if let Some(v) = a.lambda_ratio {
        cfg.truncation.lambda_ratio = v;
    }
    if let Some(v) = a.dependency_residual {
        cfg.truncation.dependency_residual = v;
    }
    if let Some(v) = a.truncation_neighbors {
        cfg.truncation.neighbors = v;
    }
    if let Some(v) = a.landmark_stride {
        cfg.landmark_stride = v;
    }
    if let Some(s) = a.scheme {
        cfg.scheme = match s {
            SchemeArg::OneSided => Scheme::OneSided,
            SchemeArg::Central => Scheme::Central,
        };
    }
    if let Some(r) = a.step_rule {
        cfg.step_rule = match r {
            StepRuleArg::Increment => StepRule::Increment,
            StepRuleArg::Flow => StepRule::Flow,
        };
    }
    if let Some(v) = a.flow_substeps {
        cfg.flow_substeps = v;
    }
    if let Some(v) = a.extrapolation_factor {
        cfg.extrapolation_factor = v;
    }
    if let Some(m) = a.interp {
        cfg.input_method = m;
        cfg.dynamic_method = m;
        cfg.observer_method = m;
    }
    if let Some(m) = a.input_interp {
        cfg.input_method = m;
    }
    if let Some(m) = a.dynamic_interp {
        cfg.dynamic_method = m;
    }
    if let Some(m) = a.observer_interp {
        cfg.observer_method = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = resolve_model_config(&a)?;
    let mut bundle = load_bundle(&a.input)?;
    if a.average_runs {
        bundle = timeseries::average_runs(&bundle)?;
    }
    let model = model::build_model(&bundle, &cfg)?;
    model::save_model(&model, &a.out)?;
    log::info!("built model d={} from {} trajectories", model.d, bundle.len());
    let inputs = json!({
        "bundle": a.input.display().to_string(),
        "bundle_hash": model.provenance.bundle_hash,
        "average_runs": a.average_runs,
    });
    write_provenance(&a.out, "build", value(&cfg)?, inputs)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = model::load_model(&a.model)?;
    let x0 = InputPoint::new(a.x0.clone())?;
    let sim = model.simulate(&x0, a.steps)?;
    if sim.any_extrapolation() {
        let flagged = sim.extrapolation_flags.iter().filter(|f| **f).count();
        log::warn!("{flagged} of {} steps left the node support", sim.extrapolation_flags.len());
    }
    let csv = simulation_csv(&model, &sim)?;
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            let config = json!({ "x0": a.x0, "steps": a.steps });
            let inputs = json!({
                "model": a.model.display().to_string(),
                "bundle_hash": model.provenance.bundle_hash,
            });
            write_provenance(path, "simulate", config, inputs)
        }
        None => std::io::stdout().write_all(&csv).map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Columns `k, t, obs_*, phi_*, extrapolated`, one row per step from 0.
pub fn simulation_csv(model: &NumericalModel, sim: &model::SimulationResult) -> Result<Vec<u8>> {
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((0..model.m).map(|j| format!("obs_{j}")));
    header.extend((0..model.d).map(|j| format!("phi_{j}")));
    header.push("extrapolated".into());
    let rows = sim
        .observations
        .iter()
        .zip(&sim.states)
        .zip(&sim.extrapolation_flags)
        .enumerate()
        .map(|(k, ((obs, phi), flag))| {
            let mut row = vec![k.to_string(), (k as f64 * sim.dt).to_string()];
            row.extend(obs.iter().map(|v| v.to_string()));
            row.extend(phi.iter().map(|v| v.to_string()));
            row.push(flag.to_string());
            row
        });
    write_csv(header, rows)
}

fn write_csv(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::Corrupt(format!("csv writer: {e}"));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&header).map_err(err)?;
    for row in rows {
        writer.write_record(&row).map_err(err)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

/// Writes the JSON report, its CSV, and provenance, or prints the JSON.
fn emit_report<T: Serialize>(out: &ReportOut, command: &str, report: &T, csv: Vec<u8>, config: Value, inputs: Value) -> Result<()> {
    let json = to_json(report)?;
    match &out.out {
        Some(path) => {
            write_file(path, &json)?;
            write_file(&path.with_extension("csv"), &csv)?;
            write_provenance(path, command, config, inputs)
        }
        None => std::io::stdout().write_all(&json).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn validate_cmd(cmd: ValidateCommand) -> Result<()> {
    match cmd {
        ValidateCommand::Convergence(a) => {
            let mut cfg: ConvergenceConfig = match &a.config {
                Some(path) => read_json(path)?,
                None => ConvergenceConfig::default(),
            };
            if let Some(v) = a.step_counts {
                cfg.step_counts = v;
            }
            if let Some(v) = a.trials {
                cfg.trials = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            let report = validate::convergence_study(&cfg)?;
            for s in &report.slopes {
                log::info!("{:?} slope {:.3}", s.scheme, s.slope);
            }
            let rows = report.points.iter().map(|p| {
                vec![
                    scheme_name(p.scheme).to_string(),
                    p.steps.to_string(),
                    p.dt.to_string(),
                    p.max_error.to_string(),
                    p.d.to_string(),
                ]
            });
            let csv = write_csv(strings(&["scheme", "steps", "dt", "max_error", "d"]), rows)?;
            emit_report(&a.output, "validate convergence", &report, csv, value(&cfg)?, json!({}))
        }
        ValidateCommand::Storage(a) => {
            let report = validate::storage_account(a.d, a.m, a.n0, a.nodes_per_axis);
            let rows = decade_sweep(a.nodes_per_axis).into_iter().map(|n| {
                let s = validate::storage_account(a.d, a.m, a.n0, n);
                vec![
                    n.to_string(),
                    s.new_model_nodes.to_string(),
                    s.naive_nodes.to_string(),
                    s.ratio.to_string(),
                ]
            });
            let csv = write_csv(strings(&["nodes_per_axis", "new_model_nodes", "naive_nodes", "ratio"]), rows)?;
            let config = json!({ "d": a.d, "m": a.m, "n0": a.n0, "nodes_per_axis": a.nodes_per_axis });
            emit_report(&a.output, "validate storage", &report, csv, config, json!({}))
        }
        ValidateCommand::Bound(a) => {
            let errors = InjectedErrors {
                dynamic: a.e_dynamic,
                input: a.e_input,
                observer: a.e_observer,
            };
            let report = validate::bound_audit(a.contraction, errors, a.n_max, a.trials, a.seed)?;
            if !report.satisfied {
                log::warn!("bound not satisfied, fitted constants {:?}", report.constants);
            }
            let rows = report
                .observed_max_deviation
                .iter()
                .zip(&report.bound_value)
                .enumerate()
                .map(|(n, (o, b))| vec![n.to_string(), o.to_string(), b.to_string()]);
            let csv = write_csv(strings(&["n", "observed_max_deviation", "bound_value"]), rows)?;
            let config = json!({
                "contraction": a.contraction,
                "errors": errors,
                "n_max": a.n_max,
                "trials": a.trials,
                "seed": a.seed,
            });
            emit_report(&a.output, "validate bound", &report, csv, config, json!({}))
        }
        ValidateCommand::Holdout(a) => {
            let model = model::load_model(&a.model)?;
            let truth = load_bundle(&a.truth)?;
            let report = validate::holdout_error(&model, &truth)?;
            let rows = report
                .series
                .iter()
                .map(|s| vec![s.step.to_string(), s.t.to_string(), s.epsilon.to_string()]);
            let csv = write_csv(strings(&["k", "t", "epsilon"]), rows)?;
            let inputs = json!({
                "model": a.model.display().to_string(),
                "model_bundle_hash": model.provenance.bundle_hash,
                "truth": a.truth.display().to_string(),
                "truth_hash": timeseries::content_hash(&truth)?,
            });
            emit_report(&a.output, "validate holdout", &report, csv, json!({}), inputs)
        }
        ValidateCommand::Egress(a) => {
            let model = model::load_model(&a.model)?;
            let base = ChanceConfig::default();
            let cfg = ChanceConfig {
                horizons: a.horizons.unwrap_or(base.horizons),
                train_counts: a.train_counts.unwrap_or(base.train_counts),
                platform_counts: a.platform_counts.unwrap_or(base.platform_counts),
            };
            let report = validate::egress_analysis(&model, &cfg)?;
            let mut header = strings(&["train0", "platform0"]);
            header.extend(cfg.horizons.iter().map(|h| format!("chance_{h}")));
            header.extend(strings(&["conservation_error", "clamped"]));
            let rows = report.points.iter().map(|p| {
                let mut row = vec![p.train0.to_string(), p.platform0.to_string()];
                row.extend(p.chance.iter().map(|c| c.to_string()));
                row.push(p.conservation_error.to_string());
                row.push(p.clamped.to_string());
                row
            });
            let csv = write_csv(header, rows)?;
            let inputs = json!({
                "model": a.model.display().to_string(),
                "model_bundle_hash": model.provenance.bundle_hash,
            });
            emit_report(&a.output, "validate egress", &report, csv, value(&cfg)?, inputs)
        }
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::OneSided => "one_sided",
        Scheme::Central => "central",
    }
}

/// Powers of ten below `n`, then `n` itself.
fn decade_sweep(n: u64) -> Vec<u64> {
    let mut out: Vec<u64> = std::iter::successors(Some(1u64), |p| p.checked_mul(10))
        .take_while(|&p| p < n)
        .collect();
    out.push(n);
    out
}

fn info(a: InfoArgs) -> Result<()> {
    let model = model::load_model(&a.model)?;
    let p = &model.provenance;
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(",");
    let text = format!(
        "format {}\nd {}\nm {}\nn0 {}\nT {}\ndt {}\nepsilon {:.6e}\nspectrum {}\nkept_indices {}\nkept_eigenvalues {}\n\
         nodes input={} dynamic={} observer={}\nlipschitz_estimate {:.6e}\nbundle_hash {}\n",
        model.format,
        model.d,
        model.m,
        model.n0,
        model.horizon(),
        model.dt,
        p.epsilon,
        list(&p.spectrum),
        p.kept_indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        list(&p.kept_eigenvalues),
        model.input_map.len(),
        model.dynamic.len(),
        model.observer.len(),
        p.lipschitz_estimate,
        p.bundle_hash,
    );
    std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}
