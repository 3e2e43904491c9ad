//! Fixed-step RK4 simulation of the arm, passive or under LQR control.
//!
//! The controller runs every `control_period` and its torque is held
//! (zero-order hold) over the RK4 substeps in between. Closed-loop control is
//! `u = τ_eq(θ_ref) − K (x − x_ref)` with `K` either re-solved online about
//! the current state and the previously commanded torque, or looked up in a
//! precomputed table.

mod bench;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{accelerations, equilibrium_torque_raw, total_energy_raw, Arm};
use crate::error::{Error, Result};
use crate::gain_table::{GainSchedule, ParamDigest};
use crate::kinematics::JointAngles;
use crate::linearization::{linearize_raw, GainMatrix, StateVector};
use crate::riccati::CostWeights;

pub use bench::{bench_controller, BenchReport};

/// Column header of exported trajectories.
pub const CSV_HEADER: &str = "t,th1,th2,th3,th4,w1,w2,w3,w4,tau1,tau2,tau3,tau4,E";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawSimConfig", into = "RawSimConfig")]
pub struct SimConfig {
    dt: f64,
    control_period: f64,
    duration: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimConfig {
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_control_period")]
    control_period: f64,
    duration: f64,
}

/// 1 kHz integration.
pub const DEFAULT_DT: f64 = 1e-3;
/// 50 Hz control.
pub const DEFAULT_CONTROL_PERIOD: f64 = 0.02;

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_control_period() -> f64 {
    DEFAULT_CONTROL_PERIOD
}

impl TryFrom<RawSimConfig> for SimConfig {
    type Error = Error;
    fn try_from(r: RawSimConfig) -> Result<Self> {
        SimConfig::new(r.dt, r.control_period, r.duration)
    }
}

impl From<SimConfig> for RawSimConfig {
    fn from(c: SimConfig) -> Self {
        RawSimConfig { dt: c.dt, control_period: c.control_period, duration: c.duration }
    }
}

impl SimConfig {
    pub fn new(dt: f64, control_period: f64, duration: f64) -> Result<Self> {
        let cfg = SimConfig { dt, control_period, duration };
        if !(dt > 0.0 && dt <= control_period && duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "simulation needs 0 < dt ≤ control_period and duration > 0, got {cfg:?}"
            )));
        }
        let ratio = control_period / dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::InvalidParameter(format!(
                "control_period {control_period} is not a multiple of dt {dt}"
            )));
        }
        Ok(cfg)
    }

    /// Default 1 kHz integration and 50 Hz control.
    pub fn with_duration(duration: f64) -> Result<Self> {
        SimConfig::new(default_dt(), default_control_period(), duration)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn control_period(&self) -> f64 {
        self.control_period
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    fn substeps(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }

    fn control_steps(&self) -> usize {
        (self.duration / self.control_period - 1e-9).ceil() as usize
    }
}

pub enum ControllerMode<'a> {
    /// Zero torque.
    Passive,
    /// Re-linearize about the current state and the last commanded torque,
    /// then solve the LQR problem, at every control update.
    Online { weights: &'a CostWeights },
    /// Interpolate a precomputed gain schedule built for `weights`.
    Table { schedule: &'a dyn GainSchedule, weights: &'a CostWeights },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: StateVector,
    /// Torque commanded from this sample until the next.
    pub torque: [f64; 4],
    pub energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    /// Largest `|θ_i − θ_ref,i|` at each sample.
    pub fn angle_errors<'a>(&'a self, reference: &'a [f64; 4]) -> impl Iterator<Item = f64> + 'a {
        self.samples.iter().map(move |s| {
            (0..4).map(|i| (s.state[i] - reference[i]).abs()).fold(0.0, f64::max)
        })
    }

    /// Largest angle difference between two equally sampled runs.
    pub fn max_angle_gap(&self, other: &Trajectory) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (0..4).map(|i| (a.state[i] - b.state[i]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            let values = std::iter::once(s.t)
                .chain(s.state.iter().copied())
                .chain(s.torque)
                .chain([s.energy]);
            let row: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn split(x: &StateVector) -> ([f64; 4], [f64; 4]) {
    (
        [x[0], x[1], x[2], x[3]],
        [x[4], x[5], x[6], x[7]],
    )
}

fn state_derivative(arm: &Arm, x: &StateVector, torque: &[f64; 4]) -> Result<StateVector> {
    let (theta, rates) = split(x);
    let acc = accelerations(arm, &theta, &rates, torque)?;
    Ok(StateVector::from_column_slice(&[
        rates[0], rates[1], rates[2], rates[3], acc[0], acc[1], acc[2], acc[3],
    ]))
}

/// One classical Runge–Kutta step with the torque held constant.
pub fn step_rk4(arm: &Arm, x: &StateVector, torque: &[f64; 4], dt: f64) -> Result<StateVector> {
    let k1 = state_derivative(arm, x, torque)?;
    let k2 = state_derivative(arm, &(x + k1 * (dt / 2.0)), torque)?;
    let k3 = state_derivative(arm, &(x + k2 * (dt / 2.0)), torque)?;
    let k4 = state_derivative(arm, &(x + k3 * dt), torque)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

pub fn energy(arm: &Arm, x: &StateVector) -> f64 {
    let (theta, rates) = split(x);
    total_energy_raw(arm, &theta, &rates)
}

fn control(
    arm: &Arm,
    mode: &ControllerMode,
    x: &StateVector,
    x_ref: &StateVector,
    feedforward: &[f64; 4],
    cached_torque: &[f64; 4],
) -> Result<[f64; 4]> {
    let gain: GainMatrix = match mode {
        ControllerMode::Passive => return Ok([0.0; 4]),
        ControllerMode::Online { weights } => {
            let (theta, rates) = split(x);
            linearize_raw(arm, &theta, &rates, cached_torque)?.lqr_gain(weights)?
        }
        ControllerMode::Table { schedule, .. } => {
            let (theta, _) = split(x);
            schedule.gain(&JointAngles::new(theta)?)?
        }
    };
    let feedback = gain * (x - x_ref);
    Ok(std::array::from_fn(|i| feedforward[i] - feedback[i]))
}

/// Runs the simulation, returning whatever was recorded before any failure.
pub fn simulate_partial(
    arm: &Arm,
    config: &SimConfig,
    mode: &ControllerMode,
    x0: &StateVector,
    x_ref: &StateVector,
) -> (Trajectory, Option<Error>) {
    let mut traj = Trajectory::default();
    if let ControllerMode::Table { schedule, weights } = mode {
        if *schedule.digest() != ParamDigest::of(arm, weights) {
            return (traj, Some(Error::DigestMismatch));
        }
    }
    let (theta_ref, _) = split(x_ref);
    let feedforward = equilibrium_torque_raw(arm, &theta_ref);
    let (theta0, _) = split(x0);
    let mut cached = equilibrium_torque_raw(arm, &theta0);

    let substeps = config.substeps();
    let steps = config.control_steps();
    traj.samples.reserve(steps + 1);
    let mut x = *x0;
    for k in 0..=steps {
        let t = k as f64 * config.control_period;
        let torque = match control(arm, mode, &x, x_ref, &feedforward, &cached) {
            Ok(u) => u,
            Err(e) => return (traj, Some(e)),
        };
        cached = torque;
        traj.samples.push(Sample { t, state: x, torque, energy: energy(arm, &x) });
        if k == steps {
            break;
        }
        for _ in 0..substeps {
            match step_rk4(arm, &x, &torque, config.dt) {
                Ok(next) => x = next,
                Err(e) => return (traj, Some(e)),
            }
        }
    }
    (traj, None)
}

pub fn simulate(
    arm: &Arm,
    config: &SimConfig,
    mode: &ControllerMode,
    x0: &StateVector,
    x_ref: &StateVector,
) -> Result<Trajectory> {
    match simulate_partial(arm, config, mode, x0, x_ref) {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// Rest state `[θ, 0]`.
pub fn rest_state(theta: [f64; 4]) -> StateVector {
    StateVector::from_column_slice(&[theta[0], theta[1], theta[2], theta[3], 0.0, 0.0, 0.0, 0.0])
}
