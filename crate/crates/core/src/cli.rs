//! Command-line front end.
//!
//! Every command reads one JSON config (`--config FILE`). Results go to
//! stdout, diagnostics to stderr. Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O failure or other runtime error |
//! | 2 | bad arguments, config or table file |
//! | 3 | IK target unreachable |
//! | 4 | a gain-table node failed; no table written |
//! | 5 | table was built for different parameters |
//! | 6 | simulation aborted mid-run; partial CSV kept |

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::dynamics::{Arm, MassModel};
use crate::error::Error;
use crate::gain_table::{
    precompute, precompute_with_threads, refine, refine_with_threads, AnyTable, GridSpec, ParamDigest,
};
use crate::kinematics::{fk_spatial, ik, ArmGeometry, JointAngles, SpatialPoint};
use crate::linearization::StateVector;
use crate::riccati::CostWeights;
use crate::simulator::{
    bench_controller, simulate_partial, ControllerMode, SimConfig, DEFAULT_CONTROL_PERIOD, DEFAULT_DT,
};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_UNREACHABLE: u8 = 3;
pub const EXIT_NODE_FAILURE: u8 = 4;
pub const EXIT_DIGEST: u8 = 5;
pub const EXIT_ABORTED: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "armlqr", version, about = "Kinematics, LQR gain tables and simulation for a four-axis arm")]
pub struct Cli {
    /// JSON configuration file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the world positions of all four joints.
    Fk {
        /// θ1 θ2 θ3 θ4 in radians
        #[arg(num_args = 4, required = true, allow_negative_numbers = true)]
        angles: Vec<f64>,
    },
    /// Solve joint angles for an end-effector target.
    Ik {
        #[arg(allow_negative_numbers = true)]
        x: f64,
        #[arg(allow_negative_numbers = true)]
        y: f64,
        #[arg(allow_negative_numbers = true)]
        z: f64,
        /// Tool pitch θ2 + θ3 + θ4, radians
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch: f64,
    },
    /// Build a gain table over the configured grid.
    Precompute {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Refine the grid's bounding box adaptively to this tolerance instead
        #[arg(long, value_name = "EPS")]
        refine: Option<f64>,
        #[arg(long, value_name = "D", default_value_t = 6, requires = "refine")]
        max_depth: u32,
        /// Worker threads (default: all cores)
        #[arg(long, value_name = "N")]
        threads: Option<usize>,
    },
    /// Simulate the arm and write the trajectory as CSV.
    Simulate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_name = "FILE", required_if_eq("mode", "table"))]
        table: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Compare online LQR latency against table lookup.
    Bench {
        #[arg(long, value_name = "FILE")]
        table: PathBuf,
        #[arg(long, value_name = "N", default_value_t = 1000)]
        iters: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Passive,
    Online,
    Table,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    geometry: ArmGeometry,
    masses: Option<MassModel>,
    weights: Option<RawWeights>,
    grid: Option<GridSpec>,
    sim: Option<RawSim>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    q_diag: [f64; 8],
    r_diag: [f64; 4],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    dt: Option<f64>,
    control_period: Option<f64>,
    duration: f64,
    theta0: [f64; 4],
    theta_ref: Option<[f64; 4]>,
    #[serde(default)]
    rates0: [f64; 4],
}

/// Simulation section: run timing plus initial and reference states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSetup {
    pub config: SimConfig,
    pub theta0: [f64; 4],
    /// Defaults to `theta0`.
    pub theta_ref: [f64; 4],
    pub rates0: [f64; 4],
}

impl SimSetup {
    pub fn initial_state(&self) -> StateVector {
        let mut x = StateVector::zeros();
        for i in 0..4 {
            x[i] = self.theta0[i];
            x[i + 4] = self.rates0[i];
        }
        x
    }

    pub fn reference_state(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<4>(0).copy_from_slice(&self.theta_ref);
        x
    }
}

/// A validated config file. Only `geometry` is mandatory; each command
/// checks for the sections it needs.
#[derive(Debug, Clone)]
pub struct Config {
    pub geometry: ArmGeometry,
    pub masses: Option<MassModel>,
    pub weights: Option<CostWeights>,
    pub grid: Option<GridSpec>,
    pub sim: Option<SimSetup>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, String> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let weights = raw
            .weights
            .map(|w| CostWeights::from_diagonals(&w.q_diag, &w.r_diag))
            .transpose()
            .map_err(|e| format!("weights: {e}"))?;
        let sim = raw.sim.map(|s| s.validate()).transpose().map_err(|e| format!("sim: {e}"))?;
        Ok(Config { geometry: raw.geometry, masses: raw.masses, weights, grid: raw.grid, sim })
    }

    pub fn load(path: &Path) -> Result<Config, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Config::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
        value.as_ref().ok_or_else(|| Failure::usage(format!("config has no `{name}` section")))
    }

    fn arm(&self) -> Result<Arm, Failure> {
        Ok(Arm::new(self.geometry, *Config::section(&self.masses, "masses")?))
    }
}

impl RawSim {
    fn validate(self) -> crate::Result<SimSetup> {
        let config = SimConfig::new(
            self.dt.unwrap_or(DEFAULT_DT),
            self.control_period.unwrap_or(DEFAULT_CONTROL_PERIOD),
            self.duration,
        )?;
        let theta_ref = self.theta_ref.unwrap_or(self.theta0);
        let all = self.theta0.iter().chain(&theta_ref).chain(&self.rates0);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("initial and reference states must be finite".into()));
        }
        Ok(SimSetup { config, theta0: self.theta0, theta_ref, rates0: self.rates0 })
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Failure { code, message: message.to_string() }
    }

    fn usage(message: impl Display) -> Self {
        Failure::new(EXIT_USAGE, message)
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Failure::new(EXIT_RUNTIME, format!("{}: {e}", path.display()))
    }

    /// Default code for a library error outside a command-specific context.
    fn from_error(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter(_)
            | Error::BadMagic
            | Error::VersionMismatch { .. }
            | Error::TruncatedData(_)
            | Error::EmptyBenchmark => EXIT_USAGE,
            Error::Unreachable { .. } | Error::SingularYaw => EXIT_UNREACHABLE,
            Error::NodeFailure { .. } => EXIT_NODE_FAILURE,
            Error::DigestMismatch => EXIT_DIGEST,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from_error(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code() as u8;
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let path = cli.config.as_deref().ok_or_else(|| Failure::usage("--config FILE is required"))?;
    let config = Config::load(path).map_err(Failure::usage)?;
    match &cli.command {
        Command::Fk { angles } => cmd_fk(&config, angles, out),
        Command::Ik { x, y, z, pitch } => cmd_ik(&config, SpatialPoint::new(*x, *y, *z), *pitch, out),
        Command::Precompute { out: file, refine, max_depth, threads } => {
            cmd_precompute(&config, file, *refine, *max_depth, *threads, out)
        }
        Command::Simulate { mode, table, out: file } => {
            cmd_simulate(&config, *mode, table.as_deref(), file, out)
        }
        Command::Bench { table, iters } => cmd_bench(&config, table, *iters, out),
    }
}

/// Fixed 12-decimal rendering with trailing zeros dropped and `-0` shown as `0`.
pub fn format_coordinate(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.') } else { &s };
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn cmd_fk(config: &Config, angles: &[f64], out: &mut dyn Write) -> Result<(), Failure> {
    let angles = JointAngles::new([angles[0], angles[1], angles[2], angles[3]])?;
    for (k, p) in fk_spatial(&config.geometry, &angles).iter().enumerate() {
        let [x, y, z] = [p.x, p.y, p.z].map(format_coordinate);
        writeln!(out, "P{} = ({x}, {y}, {z})", k + 1).map_err(|e| Failure::io(Path::new("stdout"), e))?;
    }
    Ok(())
}

fn cmd_ik(config: &Config, target: SpatialPoint, pitch: f64, out: &mut dyn Write) -> Result<(), Failure> {
    let theta = ik(&config.geometry, target, pitch)?.as_array();
    // Shortest round-trip form, so the output can be fed back to `fk`.
    let [a, b, c, d] = theta.map(|v| if v == 0.0 { 0.0 } else { v });
    writeln!(out, "theta = ({a}, {b}, {c}, {d})").map_err(|e| Failure::io(Path::new("stdout"), e))
}

fn cmd_precompute(
    config: &Config,
    file: &Path,
    epsilon: Option<f64>,
    max_depth: u32,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let arm = config.arm()?;
    let weights = Config::section(&config.weights, "weights")?;
    let grid = Config::section(&config.grid, "grid")?;
    if threads == Some(0) {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let node_failure = |e: Error| match e {
        Error::NodeFailure { .. } => Failure::new(EXIT_NODE_FAILURE, e),
        other => Failure::from_error(other),
    };
    let (bytes, report) = match epsilon {
        None => {
            let table = match threads {
                Some(n) => precompute_with_threads(&arm, weights, grid, n),
                None => precompute(&arm, weights, grid),
            }
            .map_err(node_failure)?;
            (table.to_bytes(), format!("nodes: {}\nfailures: 0\n", table.len()))
        }
        Some(eps) => {
            let root = grid.bounds();
            let (table, solves) = match threads {
                Some(n) => refine_with_threads(&arm, weights, root, eps, max_depth, n),
                None => refine(&arm, weights, root, eps, max_depth),
            }
            .map_err(node_failure)?;
            let report = format!(
                "nodes: {}\nleaves: {}\ndepth: {}\nflagged: {}\nsolves: {solves}\nfailures: 0\n",
                table.distinct_nodes(),
                table.leaves().len(),
                table.depth(),
                table.flagged().len(),
            );
            (table.to_bytes(), report)
        }
    };
    write_atomically(file, &bytes)?;
    out.write_all(report.as_bytes()).map_err(|e| Failure::io(Path::new("stdout"), e))
}

/// Writes through a temporary file in the target directory, so a failed run
/// never leaves a partial table behind.
fn write_atomically(file: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match file.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(file, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(file, e))?;
    tmp.persist(file).map_err(|e| Failure::io(file, e.error))?;
    Ok(())
}

fn load_table(path: &Path, expected: &ParamDigest) -> Result<AnyTable, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    AnyTable::from_bytes_checked(&bytes, expected)
        .map_err(|e| Failure { message: format!("{}: {e}", path.display()), ..Failure::from_error(e) })
}

fn cmd_simulate(
    config: &Config,
    mode: Mode,
    table: Option<&Path>,
    file: &Path,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let arm = config.arm()?;
    let setup = Config::section(&config.sim, "sim")?;
    let weights = match mode {
        Mode::Passive => None,
        Mode::Online | Mode::Table => Some(Config::section(&config.weights, "weights")?),
    };
    let loaded = match (mode, table, weights) {
        (Mode::Table, Some(path), Some(w)) => Some(load_table(path, &ParamDigest::of(&arm, w))?),
        (Mode::Table, None, _) => return Err(Failure::usage("--mode table needs --table FILE")),
        _ => None,
    };
    let controller = match (mode, weights, &loaded) {
        (Mode::Online, Some(weights), _) => ControllerMode::Online { weights },
        (Mode::Table, Some(weights), Some(schedule)) => ControllerMode::Table { schedule, weights },
        _ => ControllerMode::Passive,
    };
    let (traj, error) = simulate_partial(
        &arm,
        &setup.config,
        &controller,
        &setup.initial_state(),
        &setup.reference_state(),
    );
    if matches!(error, Some(Error::DigestMismatch)) {
        return Err(Failure::new(EXIT_DIGEST, Error::DigestMismatch));
    }
    let f = fs::File::create(file).map_err(|e| Failure::io(file, e))?;
    let mut w = BufWriter::new(f);
    traj.write_csv(&mut w).map_err(|e| Failure::io(file, e))?;
    if let Some(e) = &error {
        writeln!(w, "# aborted: {e}").map_err(|e| Failure::io(file, e))?;
    }
    w.flush().map_err(|e| Failure::io(file, e))?;
    writeln!(out, "samples: {}", traj.len()).map_err(|e| Failure::io(Path::new("stdout"), e))?;
    match error {
        None => Ok(()),
        Some(e) => {
            let t = traj.last().map_or(0.0, |s| s.t);
            Err(Failure::new(EXIT_ABORTED, format!("simulation aborted after t = {t}: {e}")))
        }
    }
}

fn cmd_bench(config: &Config, table: &Path, iters: usize, out: &mut dyn Write) -> Result<(), Failure> {
    if iters == 0 {
        return Err(Failure::usage(Error::EmptyBenchmark));
    }
    let arm = config.arm()?;
    let weights = Config::section(&config.weights, "weights")?;
    let schedule = load_table(table, &ParamDigest::of(&arm, weights))?;
    let report = bench_controller(&arm, weights, &schedule, iters).map_err(|e| match e {
        Error::DigestMismatch | Error::EmptyBenchmark => Failure::from_error(e),
        other => Failure::new(EXIT_RUNTIME, other),
    })?;
    let text = format!(
        "iterations: {}\nonline_median_us: {}\nonline_p95_us: {}\nlookup_median_us: {}\nlookup_p95_us: {}\nspeedup: {}\n",
        report.iterations,
        report.online_median_us,
        report.online_p95_us,
        report.lookup_median_us,
        report.lookup_p95_us,
        report.speedup,
    );
    out.write_all(text.as_bytes()).map_err(|e| Failure::io(Path::new("stdout"), e))
}
