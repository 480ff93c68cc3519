//! Sample-based certificate that an energy sublevel set `S = {E ≤ ℓ}` is
//! forward invariant under the simulated flow over a horizon `T = NΔt`.
//!
//! Every sample `x_δ` of a δ-covering of `S` is simulated for `N` steps and
//! `γ = ℓ − max E(φ_N(x_δ))` is formed. If `γ > 0` and
//!
//! ```text
//! k_E · sqrt(2kr0e^{−λT}·a·δ + 2kr0e^{−λT}·b) ≤ γ
//! ```
//!
//! then no point of `S` can end above `ℓ`: it is within δ of a sample whose
//! terminal energy is at most `ℓ − γ`, and the energy-slope bound limits
//! the gap to `γ`. The left side does not depend on the sample, so it is
//! evaluated once per round rather than inside the sample loop.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{self, PropagationBound, StabilityParams};
use crate::csvio::{fmt17, CsvError, Table};
use crate::dynamics::SystemModel;
use crate::energy::{EnergyError, EnergyForm};
use crate::integrate::{
    terminal_state, Divergence, IntegrateError, IntegratorKind, PropagateOptions, Stepper,
};
use crate::sample::{self, GridOptions, GridSpacing, SampleError, SampleGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid verification config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error("trajectory from sample {sample:?} left the guarded region at step {}: ‖x‖ = {} > {}", .divergence.step, .divergence.norm, .divergence.limit)]
    Divergence {
        sample: Vec<f64>,
        divergence: Divergence,
    },
    #[error("adaptation limit of {rounds} rounds reached")]
    AdaptLimitReached { rounds: usize },
    #[error("no adaptation left to try: {0}")]
    AdaptationExhausted(String),
    #[error("only an inconclusive round can be adapted (verdict was {0})")]
    NotInconclusive(Verdict),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    ForwardInvariant,
    Inconclusive,
    Falsified,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ForwardInvariant => "forward-invariant",
            Self::Inconclusive => "inconclusive",
            Self::Falsified => "falsified",
        })
    }
}

/// Conditions under which a verdict deserves a second look.
#[derive(Debug, Clone, PartialEq)]
pub enum Caveat {
    /// `k·r0 > 1`: the slope constant `k_E` bounds `‖∂E/∂x‖ = ‖Px‖` only
    /// for `‖x‖ ≤ 1`.
    SlopeBoundScale { k_r0: f64 },
    /// The divergence bound overflowed or the condition is not finite.
    BoundVacuous,
    /// `S` reaches beyond the ball `‖x‖ ≤ r0` where `(k, λ)` were claimed.
    SetExceedsInitialBall { set_radius: f64, r0: f64 },
}

impl fmt::Display for Caveat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SlopeBoundScale { k_r0 } => {
                write!(f, "k·r0 = {k_r0} > 1: slope-bound caveat")
            }
            Self::BoundVacuous => f.write_str("bound vacuous"),
            Self::SetExceedsInitialBall { set_radius, r0 } => write!(
                f,
                "level set reaches radius {set_radius} > r0 = {r0}: samples may leave D0"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerificationConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub delta: f64,
    pub params: StabilityParams,
    pub form: EnergyForm,
    pub kind: IntegratorKind,
    pub adapt_limit: usize,
    pub grid: GridOptions,
    pub propagate: PropagateOptions,
}

pub const DEFAULT_ADAPT_LIMIT: usize = 8;

impl VerificationConfig {
    /// RK4, default grid and divergence guard, adaptation limit 8.
    pub fn new(
        dt: f64,
        n_steps: usize,
        delta: f64,
        params: StabilityParams,
        form: EnergyForm,
    ) -> Self {
        Self {
            dt,
            n_steps,
            delta,
            params,
            form,
            kind: IntegratorKind::Rk4,
            adapt_limit: DEFAULT_ADAPT_LIMIT,
            grid: GridOptions::default(),
            propagate: PropagateOptions::default(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn propagation_bound(&self, model: &SystemModel) -> PropagationBound {
        bounds::propagation_bound(
            model.lipschitz(),
            model.jump(),
            self.dt,
            self.n_steps,
            self.kind,
        )
    }

    /// Hard errors for unusable settings; soft findings come back as caveats.
    pub fn validate(&self, model: &SystemModel) -> Result<Vec<Caveat>, VerifyError> {
        let bad = |msg: String| Err(VerifyError::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.n_steps == 0 {
            return bad("the horizon N·dt must be positive (N = 0)".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.form.dim() != model.dim() {
            return bad(format!(
                "P is {0}x{0} but model `{1}` has dimension {2}",
                self.form.dim(),
                model.name(),
                model.dim()
            ));
        }
        if self.params.r0 > model.domain_radius() {
            return bad(format!(
                "r0 = {} exceeds the domain radius {} of `{}`",
                self.params.r0,
                model.domain_radius(),
                model.name()
            ));
        }
        let mut caveats = Vec::new();
        let k_r0 = self.params.k * self.params.r0;
        if k_r0 > 1.0 {
            caveats.push(Caveat::SlopeBoundScale { k_r0 });
        }
        let set_radius = self.form.bounding_radius();
        if set_radius > self.params.r0 * (1.0 + 1e-12) {
            caveats.push(Caveat::SetExceedsInitialBall {
                set_radius,
                r0: self.params.r0,
            });
        }
        Ok(caveats)
    }
}

/// `ℓ − max(energies)`; negative when some sample ends above `ℓ`.
pub fn compute_gamma(level: f64, sample_energies: &[f64]) -> f64 {
    assert!(
        !sample_energies.is_empty(),
        "need at least one sample energy"
    );
    level
        - sample_energies
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdaptationStep {
    DoubledSteps { from: usize, to: usize },
    HalvedDelta { from: f64, to: f64 },
    ShrunkLevel { from: f64, to: f64 },
}

impl fmt::Display for AdaptationStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DoubledSteps { from, to } => write!(f, "steps {from} -> {to}"),
            Self::HalvedDelta { from, to } => write!(f, "delta {from} -> {to}"),
            Self::ShrunkLevel { from, to } => write!(f, "ell {from} -> {to}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub step: AdaptationStep,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub model: String,
    pub verdict: Verdict,
    pub gamma: f64,
    /// `k_E · sqrt(…)` at the final round's `(N, δ)`.
    pub condition_lhs: f64,
    pub max_energy: f64,
    pub argmax_sample: Vec<f64>,
    pub samples: SampleGrid,
    /// Terminal energy of each sample, in grid order.
    pub terminal_energies: Vec<f64>,
    pub adaptation_trace: Vec<Adaptation>,
    pub caveats: Vec<Caveat>,
    pub bound: PropagationBound,
    /// The configuration of the final round.
    pub config: VerificationConfig,
}

impl VerificationReport {
    /// `γ − condition_lhs`; nonnegative together with `γ > 0` certifies.
    pub fn margin(&self) -> f64 {
        self.gamma - self.condition_lhs
    }

    /// Per-sample CSV `x1,...,xn,terminal_energy` with the verdict and all
    /// parameters as leading comment lines.
    pub fn to_table(&self) -> Table {
        let cfg = &self.config;
        let dim = self.samples.dim();
        let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        header.push("terminal_energy".into());
        let mut t = Table::new(header);
        let mut c = |k: &str, v: String| t.comments.push(format!("{k}={v}"));
        c("model", self.model.clone());
        c("verdict", self.verdict.to_string());
        c("gamma", fmt17(self.gamma));
        c("condition_lhs", fmt17(self.condition_lhs));
        c("margin", fmt17(self.margin()));
        c("max_energy", fmt17(self.max_energy));
        c("argmax_sample", format!("{:?}", self.argmax_sample));
        c("dt", fmt17(cfg.dt));
        c("steps", cfg.n_steps.to_string());
        c("T", fmt17(cfg.horizon()));
        c("delta", fmt17(cfg.delta));
        c("covering_radius", fmt17(self.samples.covering_radius));
        c("samples", self.samples.count().to_string());
        c("k", fmt17(cfg.params.k));
        c("lambda", fmt17(cfg.params.lambda));
        c("r0", fmt17(cfg.params.r0));
        c("ell", fmt17(cfg.form.level()));
        c("k_E", fmt17(cfg.form.k_e()));
        c("P", format!("{:?}", cfg.form.matrix().as_row_major()));
        c("integrator", cfg.kind.to_string());
        c("a", fmt17(self.bound.a));
        c("b", fmt17(self.bound.b));
        for cav in &self.caveats {
            c("caveat", cav.to_string());
        }
        for a in &self.adaptation_trace {
            c("adapted", format!("{} ({})", a.step, a.reason));
        }
        for (x, e) in self.samples.points().zip(&self.terminal_energies) {
            let mut row = x.to_vec();
            row.push(*e);
            t.rows.push(row);
        }
        t
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CsvError> {
        self.to_table().write(w)
    }
}

/// Simulates every sample for `n_steps` and returns the terminal energies
/// in grid order.
fn terminal_energies(
    model: &SystemModel,
    grid: &SampleGrid,
    form: &EnergyForm,
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
    opts: &PropagateOptions,
) -> Result<Vec<f64>, VerifyError> {
    let results: Vec<Result<f64, VerifyError>> = grid
        .par_points()
        .map(|x| {
            let end = terminal_state(model, x, dt, n_steps, kind, opts)?;
            match end.divergence {
                Some(divergence) => Err(VerifyError::Divergence {
                    sample: x.to_vec(),
                    divergence,
                }),
                None => Ok(form.energy(&end.state)),
            }
        })
        .collect();
    results.into_iter().collect()
}

/// One pass of the certificate at a fixed configuration, no adaptation.
pub fn evaluate_round(
    model: &SystemModel,
    cfg: &VerificationConfig,
) -> Result<VerificationReport, VerifyError> {
    let mut caveats = cfg.validate(model)?;
    let grid = sample::delta_grid_with(&cfg.form, cfg.delta, model.dim(), &cfg.grid)?;
    let energies = terminal_energies(
        model,
        &grid,
        &cfg.form,
        cfg.dt,
        cfg.n_steps,
        cfg.kind,
        &cfg.propagate,
    )?;
    // first index attaining the maximum, independent of evaluation order
    let (argmax, max_energy) =
        energies
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, e)| {
                if e > best.1 {
                    (i, e)
                } else {
                    best
                }
            });
    let level = cfg.form.level();
    let gamma = compute_gamma(level, &energies);
    let bound = cfg.propagation_bound(model);
    let condition_lhs = bounds::slope_condition_lhs(
        cfg.form.k_e(),
        &cfg.params,
        &bound,
        cfg.horizon(),
        cfg.delta,
    );
    if !condition_lhs.is_finite() {
        caveats.push(Caveat::BoundVacuous);
    }
    let verdict = if max_energy > level {
        Verdict::Falsified
    } else if gamma > 0.0 && condition_lhs <= gamma {
        Verdict::ForwardInvariant
    } else {
        Verdict::Inconclusive
    };
    Ok(VerificationReport {
        model: model.name().to_string(),
        verdict,
        gamma,
        condition_lhs,
        max_energy,
        argmax_sample: grid.point(argmax).to_vec(),
        samples: grid,
        terminal_energies: energies,
        adaptation_trace: Vec::new(),
        caveats,
        bound,
        config: cfg.clone(),
    })
}

/// Next configuration after an inconclusive round.
///
/// With `γ > 0` the slope condition failed: rounds alternate between
/// doubling `N` (first) and halving `δ`. With `γ ≤ 0` the level is shrunk
/// by 10% once; a second such round stops. The change is appended to the
/// report's adaptation trace.
pub fn adapt_and_retry(
    cfg: &VerificationConfig,
    report: &mut VerificationReport,
) -> Result<VerificationConfig, VerifyError> {
    if report.verdict != Verdict::Inconclusive {
        return Err(VerifyError::NotInconclusive(report.verdict));
    }
    let rounds = report.adaptation_trace.len();
    if rounds >= cfg.adapt_limit {
        return Err(VerifyError::AdaptLimitReached { rounds });
    }
    let mut next = cfg.clone();
    let (step, reason) = if report.gamma > 0.0 {
        let slope_rounds = report
            .adaptation_trace
            .iter()
            .filter(|a| !matches!(a.step, AdaptationStep::ShrunkLevel { .. }))
            .count();
        let reason = format!(
            "slope condition {} > gamma {}",
            report.condition_lhs, report.gamma
        );
        if slope_rounds % 2 == 0 {
            next.n_steps = cfg.n_steps * 2;
            (
                AdaptationStep::DoubledSteps {
                    from: cfg.n_steps,
                    to: next.n_steps,
                },
                reason,
            )
        } else {
            next.delta = cfg.delta / 2.0;
            (
                AdaptationStep::HalvedDelta {
                    from: cfg.delta,
                    to: next.delta,
                },
                reason,
            )
        }
    } else {
        if report
            .adaptation_trace
            .iter()
            .any(|a| matches!(a.step, AdaptationStep::ShrunkLevel { .. }))
        {
            return Err(VerifyError::AdaptationExhausted(format!(
                "gamma = {} after the level was already reduced",
                report.gamma
            )));
        }
        let from = cfg.form.level();
        next.form = cfg.form.with_level(0.9 * from)?;
        (
            AdaptationStep::ShrunkLevel {
                from,
                to: next.form.level(),
            },
            format!("gamma = {} is not positive", report.gamma),
        )
    };
    report.adaptation_trace.push(Adaptation { step, reason });
    Ok(next)
}

/// Runs rounds until the set is certified, falsified, or adaptation stops.
pub fn check_invariance(
    model: &SystemModel,
    cfg: &VerificationConfig,
) -> Result<VerificationReport, VerifyError> {
    let mut cfg = cfg.clone();
    let mut trace = Vec::new();
    loop {
        let mut report = evaluate_round(model, &cfg)?;
        report.adaptation_trace = std::mem::take(&mut trace);
        if report.verdict != Verdict::Inconclusive {
            return Ok(report);
        }
        match adapt_and_retry(&cfg, &mut report) {
            Ok(next) => {
                cfg = next;
                trace = std::mem::take(&mut report.adaptation_trace);
            }
            Err(VerifyError::AdaptLimitReached { .. } | VerifyError::AdaptationExhausted(_)) => {
                return Ok(report)
            }
            Err(e) => return Err(e),
        }
    }
}

/// `δ = 2·(2R/(n − 1))`: `n` evenly spaced samples across `[−R, R]` sit
/// `δ/2` apart, `R` being the set's bounding radius.
pub fn delta_for_sample_count(form: &EnergyForm, n_samp: usize) -> f64 {
    assert!(n_samp >= 2, "need at least two samples per axis");
    4.0 * form.bounding_radius() / (n_samp - 1) as f64
}

/// `γ − condition_lhs` over a grid of horizons and sample densities.
/// Rows follow `sample_counts`, columns follow `steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginMatrix {
    pub dt: f64,
    pub steps: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub deltas: Vec<f64>,
    /// Actual number of grid points per row.
    pub grid_sizes: Vec<usize>,
    pub gammas: Vec<Vec<f64>>,
    pub condition_lhs: Vec<Vec<f64>>,
    pub margins: Vec<Vec<f64>>,
}

impl MarginMatrix {
    pub fn horizons(&self) -> Vec<f64> {
        self.steps.iter().map(|n| *n as f64 * self.dt).collect()
    }

    /// Header `n_samp,T=…,…`; one row per sample count.
    pub fn to_table(&self) -> Table {
        let mut header = vec!["n_samp".to_string()];
        header.extend(self.horizons().iter().map(|t| format!("T={t}")));
        let mut t = Table::new(header);
        t.comments.push(format!("dt={}", fmt17(self.dt)));
        t.comments.push(format!("steps={:?}", self.steps));
        t.comments.push(format!("deltas={:?}", self.deltas));
        for (i, n) in self.sample_counts.iter().enumerate() {
            let mut row = vec![*n as f64];
            row.extend_from_slice(&self.margins[i]);
            t.rows.push(row);
        }
        t
    }
}

/// Computes the certificate margin for every `(N, n_samp)` pair.
///
/// Each sample count fixes `δ` through [`delta_for_sample_count`] and a
/// strict-spacing grid (neighbours closer than `δ/2`); every sample is
/// simulated once to the largest `N`, recording energies on the way.
pub fn sweep(
    model: &SystemModel,
    cfg: &VerificationConfig,
    steps: &[usize],
    sample_counts: &[usize],
) -> Result<MarginMatrix, VerifyError> {
    if steps.is_empty() || sample_counts.is_empty() {
        return Err(VerifyError::InvalidConfig(
            "sweep grids must be non-empty".into(),
        ));
    }
    if sample_counts.iter().any(|n| *n < 2) {
        return Err(VerifyError::InvalidConfig(
            "sample counts must be at least 2".into(),
        ));
    }
    cfg.validate(model)?;
    let max_steps = *steps.iter().max().expect("non-empty");
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by_key(|&j| steps[j]);
    let level = cfg.form.level();
    let grid_opts = GridOptions {
        spacing: GridSpacing::Strict,
        ..cfg.grid
    };

    let mut out = MarginMatrix {
        dt: cfg.dt,
        steps: steps.to_vec(),
        sample_counts: sample_counts.to_vec(),
        deltas: Vec::new(),
        grid_sizes: Vec::new(),
        gammas: Vec::new(),
        condition_lhs: Vec::new(),
        margins: Vec::new(),
    };
    for &n_samp in sample_counts {
        let delta = delta_for_sample_count(&cfg.form, n_samp);
        let grid = sample::delta_grid_with(&cfg.form, delta, model.dim(), &grid_opts)?;
        let limit = cfg.propagate.divergence_factor * model.domain_radius();
        // per sample: energies at each requested step count, in `order`
        let per_sample: Vec<Result<Vec<f64>, VerifyError>> = grid
            .par_points()
            .map(|x0| {
                let mut stepper = Stepper::new(model, cfg.dt, cfg.kind)?;
                let mut x = x0.to_vec();
                let mut taken = 0;
                let mut energies = vec![0.0; steps.len()];
                for &j in &order {
                    while taken < steps[j] {
                        if !stepper.advance(&mut x) {
                            return Err(IntegrateError::NonFiniteOutput {
                                step: taken,
                                from: x0.to_vec(),
                            }
                            .into());
                        }
                        taken += 1;
                        let norm = crate::linalg::norm(&x);
                        if norm > limit {
                            return Err(VerifyError::Divergence {
                                sample: x0.to_vec(),
                                divergence: Divergence {
                                    step: taken,
                                    norm,
                                    limit,
                                },
                            });
                        }
                    }
                    energies[j] = cfg.form.energy(&x);
                }
                debug_assert_eq!(taken, max_steps);
                Ok(energies)
            })
            .collect();
        let per_sample: Vec<Vec<f64>> = per_sample.into_iter().collect::<Result<_, _>>()?;

        let mut gammas = Vec::with_capacity(steps.len());
        let mut lhs = Vec::with_capacity(steps.len());
        let mut margins = Vec::with_capacity(steps.len());
        for (j, &n) in steps.iter().enumerate() {
            let column: Vec<f64> = per_sample.iter().map(|e| e[j]).collect();
            let gamma = compute_gamma(level, &column);
            let pb =
                bounds::propagation_bound(model.lipschitz(), model.jump(), cfg.dt, n, cfg.kind);
            let c =
                bounds::slope_condition_lhs(cfg.form.k_e(), &cfg.params, &pb, pb.horizon(), delta);
            gammas.push(gamma);
            lhs.push(c);
            margins.push(gamma - c);
        }
        out.deltas.push(delta);
        out.grid_sizes.push(grid.count());
        out.gammas.push(gammas);
        out.condition_lhs.push(lhs);
        out.margins.push(margins);
    }
    Ok(out)
}
