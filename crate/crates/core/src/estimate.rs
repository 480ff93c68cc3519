//! Monte-Carlo checks of an exponential envelope `‖φ(t)‖ ≤ k‖x0‖e^{−λt}`
//! and a heuristic `(k, λ)` fit from simulated ensembles.
//!
//! Nothing here is a certificate. The fit only proposes parameters whose
//! envelope the sampled trajectories respect.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{BoundsError, StabilityParams};
use crate::csvio::{fmt17, CsvError, Table};
use crate::dynamics::{DomainBall, SystemModel};
use crate::integrate::{
    chatter_band, propagate_with, IntegrateError, IntegratorKind, PropagateOptions, Trajectory,
};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("need at least one trajectory")]
    Empty,
    #[error("ensemble shows no decay (envelope slope {slope})")]
    NoDecay { slope: f64 },
    #[error("safety factor must lie in (0, 1], got {0}")]
    InvalidSafety(f64),
    #[error("trajectories disagree on dt or dimension")]
    Inconsistent,
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub t: f64,
    pub max_abs_x: f64,
    /// `k·r0·e^{−λt}`.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub n_traj: usize,
    /// Number of `(trajectory, step)` pairs above `k‖x0‖e^{−λt} + floor`.
    pub violations: usize,
    pub violating_trajectories: usize,
    /// Smallest `k‖x0‖e^{−λt} + floor − ‖φ(t)‖` seen; negative iff violated.
    pub worst_margin: f64,
    pub chatter_floor: f64,
    /// Trajectories cut short by the divergence guard; each also counts as
    /// a violating trajectory.
    pub diverged: usize,
    pub profile: Vec<ProfilePoint>,
}

impl EnvelopeReport {
    /// CSV `t,max_abs_x,envelope`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(vec!["t".into(), "max_abs_x".into(), "envelope".into()]);
        t.comments.push(format!("n_traj={}", self.n_traj));
        t.comments.push(format!("violations={}", self.violations));
        t.comments.push(format!(
            "violating_trajectories={}",
            self.violating_trajectories
        ));
        t.comments
            .push(format!("worst_margin={}", fmt17(self.worst_margin)));
        t.comments
            .push(format!("chatter_floor={}", fmt17(self.chatter_floor)));
        for p in &self.profile {
            t.rows.push(vec![p.t, p.max_abs_x, p.envelope]);
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CsvError> {
        self.to_table().write(w)
    }
}

/// Initial states for a Monte-Carlo run: even indices uniform on
/// `‖x0‖ ≤ r0`, odd indices uniform on the shell `0.9r0 ≤ ‖x0‖ ≤ r0`.
/// Draw `i` comes from its own ChaCha stream, so the set does not depend on
/// how the work is split.
pub fn initial_states(dim: usize, r0: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let ball = DomainBall::new(r0);
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            if i % 2 == 0 {
                ball.sample(&mut rng, dim)
            } else {
                ball.sample_shell(&mut rng, dim, 0.9 * r0, r0)
            }
        })
        .collect()
}

struct TrajectoryCheck {
    norms: Vec<f64>,
    violations: usize,
    worst_margin: f64,
    diverged: bool,
}

/// Envelope check for explicit initial states.
pub fn envelope_for_initial_states(
    model: &SystemModel,
    p: &StabilityParams,
    states: &[Vec<f64>],
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
) -> Result<EnvelopeReport, EstimateError> {
    if states.is_empty() {
        return Err(EstimateError::Empty);
    }
    let floor = chatter_band(model, dt);
    let opts = PropagateOptions::default();
    let checks: Vec<Result<TrajectoryCheck, IntegrateError>> = states
        .par_iter()
        .map(|x0| {
            let traj = propagate_with(model, x0, dt, n_steps, kind, &opts)?;
            let r = linalg::norm(x0);
            let mut check = TrajectoryCheck {
                norms: Vec::with_capacity(traj.len()),
                violations: 0,
                worst_margin: f64::INFINITY,
                diverged: traj.diverged(),
            };
            for (i, x) in traj.states().enumerate() {
                let norm = linalg::norm(x);
                let bound = p.k * r * (-p.lambda * i as f64 * dt).exp() + floor;
                let margin = bound - norm;
                if margin < 0.0 {
                    check.violations += 1;
                }
                check.worst_margin = check.worst_margin.min(margin);
                check.norms.push(norm);
            }
            Ok(check)
        })
        .collect();

    let mut report = EnvelopeReport {
        n_traj: states.len(),
        violations: 0,
        violating_trajectories: 0,
        worst_margin: f64::INFINITY,
        chatter_floor: floor,
        diverged: 0,
        profile: (0..=n_steps)
            .map(|i| {
                let t = i as f64 * dt;
                ProfilePoint {
                    t,
                    max_abs_x: 0.0,
                    envelope: p.k * p.r0 * (-p.lambda * t).exp(),
                }
            })
            .collect(),
    };
    for check in checks {
        let check = check?;
        report.violations += check.violations;
        if check.violations > 0 || check.diverged {
            report.violating_trajectories += 1;
        }
        report.diverged += usize::from(check.diverged);
        report.worst_margin = report.worst_margin.min(check.worst_margin);
        for (pt, norm) in report.profile.iter_mut().zip(&check.norms) {
            pt.max_abs_x = pt.max_abs_x.max(*norm);
        }
    }
    Ok(report)
}

/// Checks `‖φ(t)‖ ≤ k‖x0‖e^{−λt} + 2MΔt` along `n_traj` simulated
/// trajectories started in the ball of radius `r0`.
pub fn monte_carlo_envelope(
    model: &SystemModel,
    p: &StabilityParams,
    n_traj: usize,
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
    seed: u64,
) -> Result<EnvelopeReport, EstimateError> {
    let states = initial_states(model.dim(), p.r0, n_traj, seed);
    envelope_for_initial_states(model, p, &states, dt, n_steps, kind)
}

/// Simulated ensemble from the same initial states as
/// [`monte_carlo_envelope`].
pub fn simulate_ensemble(
    model: &SystemModel,
    r0: f64,
    n_traj: usize,
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
    seed: u64,
) -> Result<Vec<Trajectory>, EstimateError> {
    let opts = PropagateOptions::default();
    initial_states(model.dim(), r0, n_traj, seed)
        .par_iter()
        .map(|x0| propagate_with(model, x0, dt, n_steps, kind, &opts).map_err(Into::into))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// `k` is divided and `λ` multiplied by this factor.
    pub safety: f64,
    /// Entries with `‖φ‖` below `5·chatter_floor` are ignored, and the fit
    /// window ends once the whole ensemble is below it.
    pub chatter_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            safety: 0.8,
            chatter_floor: 0.0,
        }
    }
}

pub const FIT_WINDOW_FACTOR: f64 = 5.0;

/// Output of [`fit_exponential_params`]. Heuristic: not a certificate input
/// unless explicitly accepted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedParams {
    pub k_hat: f64,
    pub lambda_hat: f64,
    pub k_raw: f64,
    pub lambda_raw: f64,
    pub safety: f64,
    /// End of the fit window in time units.
    pub window_end: f64,
    pub points: usize,
}

impl FittedParams {
    pub const LABEL: &'static str = "HEURISTIC";

    pub fn to_stability_params(&self, r0: f64) -> Result<StabilityParams, BoundsError> {
        StabilityParams::new(self.k_hat, self.lambda_hat, r0)
    }
}

/// Least-squares slope of the log upper envelope `max_i ‖φ_i(t)‖/‖x0_i‖`
/// over the pre-chatter window.
///
/// The raw `λ` is minus that slope; the raw `k` is the smallest value
/// (at least 1) that lifts `k·e^{−λt}` over every envelope point used.
pub fn fit_exponential_params(
    trajectories: &[Trajectory],
    opts: &FitOptions,
) -> Result<FittedParams, EstimateError> {
    if !(opts.safety > 0.0 && opts.safety <= 1.0) {
        return Err(EstimateError::InvalidSafety(opts.safety));
    }
    let first = trajectories.first().ok_or(EstimateError::Empty)?;
    let dt = first.dt();
    if trajectories
        .iter()
        .any(|t| t.dt() != dt || t.dim() != first.dim())
    {
        return Err(EstimateError::Inconsistent);
    }
    let len = trajectories.iter().map(Trajectory::len).max().unwrap_or(0);
    let cutoff = FIT_WINDOW_FACTOR * opts.chatter_floor;

    let mut ts = Vec::new();
    let mut logs = Vec::new();
    let mut window_end = 0;
    for i in 0..len {
        let mut ensemble_max = 0.0f64;
        let mut ratio = f64::NEG_INFINITY;
        for traj in trajectories.iter().filter(|t| i < t.len()) {
            let norm = linalg::norm(traj.state(i));
            ensemble_max = ensemble_max.max(norm);
            let r = linalg::norm(traj.first());
            if r > 0.0 && norm > 0.0 && norm >= cutoff {
                ratio = ratio.max(norm / r);
            }
        }
        if ensemble_max < cutoff || ensemble_max == 0.0 {
            break;
        }
        window_end = i;
        if ratio > 0.0 {
            ts.push(i as f64 * dt);
            logs.push(ratio.ln());
        }
    }
    if ts.len() < 2 {
        return Err(EstimateError::NoDecay { slope: 0.0 });
    }
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let l_mean = logs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, l) in ts.iter().zip(&logs) {
        sxy += (t - t_mean) * (l - l_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    let slope = sxy / sxx;
    if slope.is_nan() || slope >= 0.0 {
        return Err(EstimateError::NoDecay { slope });
    }
    let lambda = -slope;
    let k = ts
        .iter()
        .zip(&logs)
        .map(|(t, l)| (l + lambda * t).exp())
        .fold(1.0f64, f64::max);
    Ok(FittedParams {
        k_hat: k / opts.safety,
        lambda_hat: lambda * opts.safety,
        k_raw: k,
        lambda_raw: lambda,
        safety: opts.safety,
        window_end: window_end as f64 * dt,
        points: ts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin;

    fn paper_params() -> StabilityParams {
        StabilityParams::new(8.0 / 3.0, 3.0, 1.5).unwrap()
    }

    #[test]
    fn initial_states_respect_radius_and_bias() {
        let xs = initial_states(2, 1.5, 200, 7);
        for (i, x) in xs.iter().enumerate() {
            let r = linalg::norm(x);
            assert!(r <= 1.5 + 1e-12);
            if i % 2 == 1 {
                assert!(r >= 1.35 - 1e-12);
            }
        }
        assert_eq!(xs, initial_states(2, 1.5, 200, 7));
        assert_eq!(xs[..50], initial_states(2, 1.5, 50, 7)[..]);
        assert_ne!(xs, initial_states(2, 1.5, 200, 8));
    }

    #[test]
    fn zero_start_has_no_violations() {
        let model = builtin("sgn-cubic").unwrap();
        let r = envelope_for_initial_states(
            &model,
            &paper_params(),
            &[vec![0.0]],
            0.01,
            100,
            IntegratorKind::Rk4,
        )
        .unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.n_traj, 1);
        assert_eq!(r.profile.len(), 101);
    }

    #[test]
    fn paper_envelope_holds_small_k_fails() {
        let model = builtin("sgn-cubic").unwrap();
        let r = monte_carlo_envelope(
            &model,
            &paper_params(),
            200,
            0.01,
            500,
            IntegratorKind::Rk4,
            1,
        )
        .unwrap();
        assert_eq!(r.violations, 0, "worst margin {}", r.worst_margin);
        assert!((r.chatter_floor - 0.08).abs() < 1e-15);

        let tight = StabilityParams::new(1.0, 3.0, 1.5).unwrap();
        let r =
            monte_carlo_envelope(&model, &tight, 200, 0.01, 500, IntegratorKind::Rk4, 1).unwrap();
        assert!(r.violations > 0);
        assert!(r.worst_margin < 0.0);
    }

    #[test]
    fn profile_csv_layout() {
        let model = builtin("sgn-cubic").unwrap();
        let r = monte_carlo_envelope(
            &model,
            &paper_params(),
            10,
            0.01,
            50,
            IntegratorKind::Rk4,
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let t = Table::read(buf.as_slice()).unwrap();
        assert_eq!(t.header, ["t", "max_abs_x", "envelope"]);
        assert_eq!(t.rows.len(), 51);
        assert!((t.rows[0][2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fit_linear_decay() {
        let model = builtin("linear-1d").unwrap();
        let trajs = simulate_ensemble(&model, 1.5, 50, 0.01, 300, IntegratorKind::Rk4, 2).unwrap();
        let fit = fit_exponential_params(&trajs, &FitOptions::default()).unwrap();
        assert!((fit.lambda_raw - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.k_raw - 1.0).abs() < 1e-6);
        assert!((fit.lambda_hat - 0.8).abs() < 1e-6);
        assert!((fit.k_hat - 1.25).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_constant_and_bad_safety() {
        let zero = Trajectory::from_states(0.01, &vec![vec![0.0]; 20]);
        assert!(matches!(
            fit_exponential_params(&[zero], &FitOptions::default()),
            Err(EstimateError::NoDecay { .. })
        ));
        let flat = Trajectory::from_states(0.01, &vec![vec![1.0]; 20]);
        assert!(matches!(
            fit_exponential_params(std::slice::from_ref(&flat), &FitOptions::default()),
            Err(EstimateError::NoDecay { .. })
        ));
        let opts = FitOptions {
            safety: 1.5,
            ..FitOptions::default()
        };
        assert_eq!(
            fit_exponential_params(&[flat], &opts),
            Err(EstimateError::InvalidSafety(1.5))
        );
        assert_eq!(
            fit_exponential_params(&[], &FitOptions::default()),
            Err(EstimateError::Empty)
        );
    }
}
