//! Closed-form divergence bounds for fixed-step state-transition maps.
//!
//! For a field with `‖f(x) − f(y)‖ ≤ L‖x − y‖ + M`, one step of Euler or RK4
//! satisfies `‖Φ(x) − Φ(y)‖ ≤ m‖x − y‖ + c` with
//!
//! ```text
//! Euler: m = 1 + LΔt,  c = ΔtM
//! RK4:   m = 1 + Lα,   c = αM,   α = Δt(1 + LΔt/2 + (LΔt)²/6 + (LΔt)³/24)
//! ```
//!
//! and `N` steps satisfy `a‖x − y‖ + b` with `a = mᴺ`, `b = c(mᴺ − 1)/(m − 1)`.
//! Under exponential stability with constants `(k, λ, r0)` the same
//! difference is also bounded by `2kr0e^{−λT}`; the geometric mean of the
//! two gives the square-root bound used by the verifier.

use thiserror::Error;

use crate::integrate::IntegratorKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("k must be at least 1, got {0}")]
    InvalidK(f64),
    #[error("lambda must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("r0 must be positive, got {0}")]
    InvalidR0(f64),
}

/// `Δt·(1 + u/2 + u²/6 + u³/24)` with `u = LΔt`, evaluated in Horner form.
///
/// Must not be rounded before use: `(1 + Lα)^N` amplifies any error in α.
pub fn alpha(lipschitz: f64, dt: f64) -> f64 {
    let u = lipschitz * dt;
    dt * (1.0 + u * (0.5 + u * (1.0 / 6.0 + u / 24.0)))
}

/// One-step affine bound `multiplier·‖x − y‖ + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub multiplier: f64,
    pub offset: f64,
    /// `multiplier − 1`, kept separately to avoid cancellation.
    pub growth: f64,
}

pub fn step_bound(lipschitz: f64, jump: f64, dt: f64, kind: IntegratorKind) -> StepBound {
    let scale = match kind {
        IntegratorKind::Euler => dt,
        IntegratorKind::Rk4 => alpha(lipschitz, dt),
    };
    let growth = lipschitz * scale;
    StepBound {
        multiplier: 1.0 + growth,
        offset: scale * jump,
        growth,
    }
}

/// `N`-step bound `a‖x − y‖ + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationBound {
    pub a: f64,
    pub b: f64,
    /// `ln a`, finite even when `a` overflows.
    pub ln_a: f64,
    /// `ln b`; `-inf` when `b = 0`.
    pub ln_b: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub kind: IntegratorKind,
    pub step: StepBound,
    /// `a` or `b` overflowed to `+inf`.
    pub saturated: bool,
}

impl PropagationBound {
    /// `T = N·Δt`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// `ln(eˣ − 1)` for `x > 0` without overflow.
fn ln_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

pub fn propagation_bound(
    lipschitz: f64,
    jump: f64,
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
) -> PropagationBound {
    let step = step_bound(lipschitz, jump, dt, kind);
    let n = n_steps as f64;
    let ln_a = n * step.growth.ln_1p();
    let a = ln_a.exp();
    let (b, ln_b) = if step.offset == 0.0 || n_steps == 0 {
        (0.0, f64::NEG_INFINITY)
    } else if step.growth == 0.0 {
        (n * step.offset, (n * step.offset).ln())
    } else {
        // c·(mᴺ − 1)/(m − 1)
        let b = step.offset * ln_a.exp_m1() / step.growth;
        let ln_b = step.offset.ln() + ln_expm1(ln_a) - step.growth.ln();
        (b, ln_b)
    };
    PropagationBound {
        a,
        b,
        ln_a,
        ln_b,
        n_steps,
        dt,
        kind,
        step,
        saturated: a.is_infinite() || b.is_infinite(),
    }
}

/// Exponential-stability constants: `‖φ(t)‖ ≤ k‖x0‖e^{−λ(t−t0)}` for
/// `‖x0‖ ≤ r0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    pub k: f64,
    pub lambda: f64,
    pub r0: f64,
}

impl StabilityParams {
    pub fn new(k: f64, lambda: f64, r0: f64) -> Result<Self, BoundsError> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(BoundsError::InvalidK(k));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(BoundsError::InvalidLambda(lambda));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(BoundsError::InvalidR0(r0));
        }
        Ok(Self { k, lambda, r0 })
    }
}

/// `2·k·r0·e^{−λT}`.
pub fn exponential_bound(p: &StabilityParams, horizon: f64) -> f64 {
    2.0 * p.k * p.r0 * (-p.lambda * horizon).exp()
}

/// The two coefficients under the square root: `(2kr0e^{−λT}·a, 2kr0e^{−λT}·b)`.
///
/// Evaluated in log space so an overflowed `a` paired with a tiny
/// exponential still gives a finite product.
pub fn sqrt_bound_terms(p: &StabilityParams, pb: &PropagationBound, horizon: f64) -> (f64, f64) {
    let ln_exp = (2.0 * p.k * p.r0).ln() - p.lambda * horizon;
    ((ln_exp + pb.ln_a).exp(), (ln_exp + pb.ln_b).exp())
}

/// `sqrt(2kr0e^{−λT}·a·dist + 2kr0e^{−λT}·b)`.
pub fn sqrt_bound(p: &StabilityParams, pb: &PropagationBound, horizon: f64, dist: f64) -> f64 {
    debug_assert!(dist >= 0.0);
    let (a_term, b_term) = sqrt_bound_terms(p, pb, horizon);
    let a_part = if dist == 0.0 { 0.0 } else { a_term * dist };
    (a_part + b_term).sqrt()
}

/// `k_E · sqrt(2kr0e^{−λT}·a·δ + 2kr0e^{−λT}·b)`: the sample-independent side
/// of the certificate. Any `γ` at least this large closes the δ gap.
pub fn slope_condition_lhs(
    k_e: f64,
    p: &StabilityParams,
    pb: &PropagationBound,
    horizon: f64,
    delta: f64,
) -> f64 {
    k_e * sqrt_bound(p, pb, horizon, delta)
}

/// One row of the bound tables: `T,a,b,exp_bound,sqrt_a_term,sqrt_b_term`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub horizon: f64,
    pub a: f64,
    pub b: f64,
    pub exp_bound: f64,
    pub sqrt_a_term: f64,
    pub sqrt_b_term: f64,
}

pub const BOUND_TABLE_HEADER: [&str; 6] =
    ["T", "a", "b", "exp_bound", "sqrt_a_term", "sqrt_b_term"];

impl BoundRow {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.horizon,
            self.a,
            self.b,
            self.exp_bound,
            self.sqrt_a_term,
            self.sqrt_b_term,
        ]
    }
}

/// Bound values at each step count in `steps`.
pub fn bound_rows(
    lipschitz: f64,
    jump: f64,
    dt: f64,
    kind: IntegratorKind,
    p: &StabilityParams,
    steps: impl IntoIterator<Item = usize>,
) -> Vec<BoundRow> {
    steps
        .into_iter()
        .map(|n| {
            let pb = propagation_bound(lipschitz, jump, dt, n, kind);
            let horizon = pb.horizon();
            let (sqrt_a_term, sqrt_b_term) = sqrt_bound_terms(p, &pb, horizon);
            BoundRow {
                horizon,
                a: pb.a,
                b: pb.b,
                exp_bound: exponential_bound(p, horizon),
                sqrt_a_term,
                sqrt_b_term,
            }
        })
        .collect()
}

/// First row whose two square-root coefficients are both below `threshold`.
pub fn first_below(rows: &[BoundRow], threshold: f64) -> Option<&BoundRow> {
    rows.iter()
        .find(|r| r.sqrt_a_term < threshold && r.sqrt_b_term < threshold)
}
