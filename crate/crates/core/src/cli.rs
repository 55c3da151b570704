//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Error;
use crate::io::{self, IoError};
use crate::lti::{self, StateRange, Trajectory};
use crate::montecarlo::{run_campaign, PredictorId, RegionGamma};
use crate::predictors::{predict, resolve_gamma, NoiseModel, PredictionProblem};
use crate::signal::{Construction, SignalMatrix};
use crate::uncertainty::{confidence_region, DofPolicy};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad or missing arguments)
  3  I/O error (unreadable input, unwritable output)
  4  format error (malformed model, trajectory, problem, region or config file)
  5  numeric error (rank, stability, solver or dimension failures)

Errors are reported on stderr as one line:
  error kind=<usage|io|format|numeric> code=<n> msg=\"...\"";

#[derive(Debug, Parser)]
#[command(name = "ddpredict", version, about = "Data-driven output prediction with confidence regions", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Generate a random stable, observable model normalized to unit H2 norm.
    Sysgen(SysGenArgs),
    /// Simulate a model from the zero state.
    Simulate(SimulateArgs),
    /// Predict future outputs from a recorded trajectory.
    Predict(PredictArgs),
    /// Run a Monte Carlo campaign and write its tables.
    Campaign(CampaignArgs),
    /// Sample the boundary of a two-dimensional confidence region.
    Ellipse(EllipseArgs),
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SysGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// State dimension range, e.g. `3..8` (inclusive) or a single value.
    #[arg(long = "nx", default_value = "3..8")]
    pub n_x_range: StateRange,
    #[arg(long = "nu", default_value_t = 1)]
    pub n_u: usize,
    #[arg(long = "ny", default_value_t = 1)]
    pub n_y: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input CSV with header `t,u1..`.
    #[arg(long, conflicts_with = "length", required_unless_present = "length")]
    pub inputs: Option<PathBuf>,
    /// Number of unit-Gaussian input samples to draw.
    #[arg(long)]
    pub length: Option<usize>,
    /// Output measurement noise variance.
    #[arg(long, default_value_t = 0.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct PredictArgs {
    /// Trajectory CSV the signal matrix is built from.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "L")]
    pub l: usize,
    #[arg(long = "L0")]
    pub l0: usize,
    #[arg(long, default_value = "page")]
    pub construction: Construction,
    /// Accept a Hankel matrix despite its correlated noise.
    #[arg(long)]
    pub allow_hankel: bool,
    /// Problem JSON with `u_ini`, `y_ini`, `u`.
    #[arg(long, conflicts_with_all = ["u_ini", "y_ini", "u"])]
    pub problem: Option<PathBuf>,
    /// Comma-separated past inputs (default zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub u_ini: Option<Vec<f64>>,
    /// Comma-separated past outputs (default zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub y_ini: Option<Vec<f64>>,
    /// Comma-separated future inputs.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub u: Option<Vec<f64>>,
    /// pinv, sub, smm, wd, mse-mb, mse-sub, mse-smm or mse-wd.
    #[arg(long)]
    pub kind: PredictorId,
    /// Model JSON, required for mse-mb and --cr mb.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Gamma source of the confidence region: mb, sub, smm or wd.
    #[arg(long)]
    pub cr: Option<RegionGamma>,
    #[arg(long)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.95)]
    pub p: f64,
    /// Boundary points to include for a two-dimensional region.
    #[arg(long)]
    pub boundary: Option<usize>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CampaignArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct EllipseArgs {
    /// Region JSON, or a prediction JSON that embeds one.
    #[arg(long)]
    pub region: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_points: usize,
    /// `.csv` for bare points, `.json` for the region with its boundary.
    #[arg(long)]
    pub out: PathBuf,
}

/// Rejected command line, with clap's rendered message.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct UsageError {
    pub message: String,
    /// Set for `--help` and `--version`, which are not failures.
    pub informational: bool,
}

/// Parses arguments (without the program name).
pub fn parse_args<I, S>(argv: I) -> Result<Command, UsageError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("ddpredict")).chain(argv.into_iter().map(Into::into));
    let cli = Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
        UsageError { message: e.render().to_string(), informational }
    })?;
    cli.command.validate()?;
    Ok(cli.command)
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError { message: msg.into(), informational: false }
}

impl Command {
    /// Cross-argument checks clap cannot express.
    pub fn validate(&self) -> Result<(), UsageError> {
        match self {
            Command::Predict(a) => {
                let needs_model = a.kind == PredictorId::MseMb || a.cr == Some(RegionGamma::ModelBased);
                if needs_model && a.model.is_none() {
                    return Err(usage("--model is required for mse-mb and --cr mb"));
                }
                if a.problem.is_none() && a.u.is_none() {
                    return Err(usage("either --problem or --u is required"));
                }
                if a.boundary.is_some() && a.cr.is_none() {
                    return Err(usage("--boundary needs --cr"));
                }
                if !(a.p > 0.0 && a.p < 1.0) {
                    return Err(usage(format!("--p {} outside (0, 1)", a.p)));
                }
                if !(a.sigma2 >= 0.0) {
                    return Err(usage(format!("--sigma2 {} must be >= 0", a.sigma2)));
                }
            }
            Command::Simulate(a) if !(a.sigma2 >= 0.0) => {
                return Err(usage(format!("--sigma2 {} must be >= 0", a.sigma2)));
            }
            Command::Ellipse(a) => {
                let ext = a.out.extension().and_then(|e| e.to_str()).unwrap_or("");
                if ext != "csv" && ext != "json" {
                    return Err(usage("--out must end in .csv or .json"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    File(#[from] IoError),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::File(IoError::Numeric(e))
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::File(IoError::Io { .. }) => "io",
            CliError::File(IoError::Format { .. }) => "format",
            CliError::File(IoError::Numeric(_)) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "io" => 3,
            "format" => 4,
            _ => 5,
        }
    }

    /// Single-line report for stderr.
    pub fn report_line(&self) -> String {
        let msg = self.to_string();
        let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
        let escaped = first.replace('\\', "\\\\").replace('"', "\\\"");
        format!("error kind={} code={} msg=\"{}\"", self.kind(), self.exit_code(), escaped)
    }
}

/// Executes a parsed command.
pub fn run(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Sysgen(a) => sysgen(a),
        Command::Simulate(a) => simulate(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Campaign(a) => {
            let cfg = io::read_campaign_config(&a.config)?;
            let report = run_campaign(&cfg)?;
            io::write_report(&a.out, &report)?;
            Ok(())
        }
        Command::Ellipse(a) => ellipse(a),
    }
}

fn sysgen(a: &SysGenArgs) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let model = lti::random_system(a.n_x_range, a.n_u, a.n_y, &mut rng)?;
    io::write_model(&a.out, &model)?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let model = io::read_model(&a.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let inputs: Vec<DVector<f64>> = match (&a.inputs, a.length) {
        (Some(path), _) => io::read_inputs(path)?,
        (None, Some(n)) => {
            (0..n).map(|_| DVector::from_fn(model.n_u(), |_, _| StandardNormal.sample(&mut rng))).collect()
        }
        (None, None) => return Err(usage("--inputs or --length is required").into()),
    };
    let noise = (a.sigma2 > 0.0).then(|| {
        let normal = Normal::new(0.0, a.sigma2.sqrt()).expect("valid std");
        (0..inputs.len()).map(|_| DVector::from_fn(model.n_y(), |_, _| normal.sample(&mut rng))).collect::<Vec<_>>()
    });
    let traj = lti::simulate(&model, &DVector::zeros(model.n_x()), &inputs, noise.as_deref())?;
    io::write_trajectory(&a.out, &traj)?;
    Ok(())
}

fn build_matrix(traj: &Trajectory, a: &PredictArgs) -> Result<SignalMatrix, Error> {
    match a.construction {
        Construction::Page => SignalMatrix::build_page(traj, a.l, a.l0),
        Construction::Hankel => {
            let sm = SignalMatrix::build_hankel(traj, a.l, a.l0)?;
            Ok(if a.allow_hankel { sm.with_hankel_override() } else { sm })
        }
        Construction::Independent => {
            Err(Error::InvalidArgument("independent trajectories need several data files; use page or hankel".into()))
        }
    }
}

fn problem_for(sm: &SignalMatrix, a: &PredictArgs) -> Result<PredictionProblem, CliError> {
    if let Some(path) = &a.problem {
        return Ok(io::read_problem(path)?);
    }
    let zeros = PredictionProblem::zeros(sm);
    let or_zeros = |v: &Option<Vec<f64>>, z: &DVector<f64>| v.clone().map_or_else(|| z.clone(), DVector::from_vec);
    Ok(PredictionProblem::new(
        or_zeros(&a.u_ini, &zeros.u_ini),
        or_zeros(&a.y_ini, &zeros.y_ini),
        or_zeros(&a.u, &zeros.u),
    ))
}

fn predict_cmd(a: &PredictArgs) -> Result<(), CliError> {
    let traj = io::read_trajectory(&a.data)?;
    let model = a.model.as_deref().map(io::read_model).transpose()?;
    let sm = build_matrix(&traj, a)?;
    let prob = problem_for(&sm, a)?;
    let noise = NoiseModel::iid(a.sigma2)?;
    let source = a.kind.gamma_source(model.as_ref())?;
    let result = predict(&sm, &prob, a.kind.kind(), &noise, source.as_ref())?;
    let region = match a.cr {
        Some(cr) => {
            let gamma = resolve_gamma(&sm, &cr.source(model.as_ref())?, &noise)?;
            let region = confidence_region(&result, &gamma, &noise, a.p, DofPolicy::OutputDimension)?;
            let boundary = a.boundary.map(|n| region.ellipse_boundary(n)).transpose()?;
            Some((region, boundary))
        }
        None => None,
    };
    let text = io::prediction_to_json(a.kind.label(), &result, region.as_ref().map(|(r, b)| (r, b.clone())));
    match &a.out {
        Some(path) => io::write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn ellipse(a: &EllipseArgs) -> Result<(), CliError> {
    let region = io::read_region(&a.region)?;
    let points = region.ellipse_boundary(a.n_points)?;
    let text =
        if has_ext(&a.out, "json") { io::region_to_json(&region, Some(points)) } else { io::boundary_to_csv(&points) };
    io::write_atomic(&a.out, text.as_bytes())?;
    Ok(())
}

fn has_ext(p: &Path, ext: &str) -> bool {
    p.extension().and_then(|e| e.to_str()) == Some(ext)
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cmd = match parse_args(argv) {
        Ok(c) => c,
        Err(e) if e.informational => {
            print!("{}", e.message);
            return 0;
        }
        Err(e) => {
            eprintln!("{}", CliError::from(e).report_line());
            return 2;
        }
    };
    match run(&cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report_line());
            e.exit_code()
        }
    }
}
