use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{equilibrium_torque_raw, Arm};
use crate::error::{Error, Result};
use crate::gain_table::{GainSchedule, ParamDigest};
use crate::kinematics::JointAngles;
use crate::linearization::{linearize_raw, StateVector};
use crate::riccati::CostWeights;

const SEED: u64 = 0x5eed_a11e;
const RATE_SPAN: f64 = 0.5;

/// Controller latencies in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub online_median_us: f64,
    pub online_p95_us: f64,
    pub lookup_median_us: f64,
    pub lookup_p95_us: f64,
    /// `online_median_us / lookup_median_us`.
    pub speedup: f64,
}

struct Probe {
    state: StateVector,
    theta: [f64; 4],
    rates: [f64; 4],
    torque: [f64; 4],
}

fn probes(arm: &Arm, schedule: &dyn GainSchedule, n: usize) -> Vec<Probe> {
    let bounds = schedule.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..n)
        .map(|_| {
            let theta: [f64; 4] = std::array::from_fn(|d| rng.random_range(bounds.lo[d]..=bounds.hi[d]));
            let rates: [f64; 4] = std::array::from_fn(|_| rng.random_range(-RATE_SPAN..=RATE_SPAN));
            let mut state = StateVector::zeros();
            for i in 0..4 {
                state[i] = theta[i];
                state[i + 4] = rates[i];
            }
            Probe { state, theta, rates, torque: equilibrium_torque_raw(arm, &theta) }
        })
        .collect()
}

/// `(median, p95)` of the samples, which get sorted in place.
fn percentiles(samples: &mut [f64]) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    let p95 = samples[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    (median, p95)
}

/// Times one online control step (linearize, solve the CARE, apply the gain)
/// against one table lookup plus gain application, at the same seeded random
/// states inside the schedule's bounds. Runs on the calling thread.
pub fn bench_controller(
    arm: &Arm,
    weights: &CostWeights,
    schedule: &dyn GainSchedule,
    n_iters: usize,
) -> Result<BenchReport> {
    if n_iters == 0 {
        return Err(Error::EmptyBenchmark);
    }
    if *schedule.digest() != ParamDigest::of(arm, weights) {
        return Err(Error::DigestMismatch);
    }
    let probes = probes(arm, schedule, n_iters);
    let mut online = Vec::with_capacity(n_iters);
    let mut lookup = Vec::with_capacity(n_iters);
    for p in &probes {
        let start = Instant::now();
        let k = linearize_raw(arm, &p.theta, &p.rates, &p.torque)?.lqr_gain(weights)?;
        black_box(k * black_box(p.state));
        online.push(start.elapsed().as_secs_f64() * 1e6);

        let start = Instant::now();
        let k = schedule.gain(&JointAngles::new(black_box(p.theta))?)?;
        black_box(k * black_box(p.state));
        lookup.push(start.elapsed().as_secs_f64() * 1e6);
    }
    let (online_median_us, online_p95_us) = percentiles(&mut online);
    let (lookup_median_us, lookup_p95_us) = percentiles(&mut lookup);
    Ok(BenchReport {
        iterations: n_iters,
        online_median_us,
        online_p95_us,
        lookup_median_us,
        lookup_p95_us,
        speedup: online_median_us / lookup_median_us.max(f64::MIN_POSITIVE),
    })
}
