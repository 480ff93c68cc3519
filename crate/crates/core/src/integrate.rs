//! Fixed-step explicit integrators and their N-fold composition.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::csvio::{CsvError, Table};
use crate::dynamics::{DynamicsError, SystemModel};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite state at step {step} starting from {from:?}")]
    NonFiniteOutput { step: usize, from: Vec<f64> },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum IntegratorKind {
    Euler,
    #[default]
    Rk4,
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Euler => "euler",
            Self::Rk4 => "rk4",
        })
    }
}

impl FromStr for IntegratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "rk4" | "rk" | "runge-kutta" => Ok(Self::Rk4),
            other => Err(format!(
                "unknown integrator `{other}` (expected euler or rk4)"
            )),
        }
    }
}

/// Multiple of `M·Δt` used as the residual oscillation amplitude of a
/// fixed-step integrator sliding along a discontinuity.
pub const CHATTER_FACTOR: f64 = 2.0;

/// `2·M·Δt`: additive floor for comparing simulated trajectories against
/// decaying envelopes.
pub fn chatter_band(model: &SystemModel, dt: f64) -> f64 {
    CHATTER_FACTOR * model.jump() * dt
}

/// Reusable single-step engine holding the stage buffers.
pub struct Stepper<'a> {
    model: &'a SystemModel,
    dt: f64,
    kind: IntegratorKind,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        model: &'a SystemModel,
        dt: f64,
        kind: IntegratorKind,
    ) -> Result<Self, IntegrateError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(IntegrateError::InvalidStep(dt));
        }
        let n = model.dim();
        Ok(Self {
            model,
            dt,
            kind,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        })
    }

    /// Advances `x` by one step in place. Returns `false` if any stage or
    /// the result is non-finite (in which case `x` is left unspecified).
    pub fn advance(&mut self, x: &mut [f64]) -> bool {
        let dt = self.dt;
        let f = self.model;
        match self.kind {
            IntegratorKind::Euler => {
                f.eval_into(x, &mut self.k[0]);
                for (xi, ki) in x.iter_mut().zip(&self.k[0]) {
                    *xi += ki * dt;
                }
            }
            IntegratorKind::Rk4 => {
                let [k1, k2, k3, k4] = &mut self.k;
                f.eval_into(x, k1);
                for i in 0..x.len() {
                    self.tmp[i] = x[i] + k1[i] * dt / 2.0;
                }
                f.eval_into(&self.tmp, k2);
                for i in 0..x.len() {
                    self.tmp[i] = x[i] + k2[i] * dt / 2.0;
                }
                f.eval_into(&self.tmp, k3);
                for i in 0..x.len() {
                    self.tmp[i] = x[i] + k3[i] * dt;
                }
                f.eval_into(&self.tmp, k4);
                if k1
                    .iter()
                    .chain(&*k2)
                    .chain(&*k3)
                    .chain(&*k4)
                    .any(|v| !v.is_finite())
                {
                    return false;
                }
                for i in 0..x.len() {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        x.iter().all(|v| v.is_finite())
    }
}

/// One application of the state-transition map.
pub fn step(
    model: &SystemModel,
    x: &[f64],
    dt: f64,
    kind: IntegratorKind,
) -> Result<Vec<f64>, IntegrateError> {
    model.check_dim(x)?;
    let mut stepper = Stepper::new(model, dt, kind)?;
    let mut out = x.to_vec();
    if !stepper.advance(&mut out) {
        return Err(IntegrateError::NonFiniteOutput {
            step: 0,
            from: x.to_vec(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagateOptions {
    /// Trajectories are cut off once `‖x‖ > divergence_factor · r`.
    pub divergence_factor: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            divergence_factor: 10.0,
        }
    }
}

/// Where and how far a trajectory left the guarded region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub norm: f64,
    pub limit: f64,
}

/// Equally spaced states `x(t0 + i·dt)`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    data: Vec<f64>,
    /// Set when the trajectory was truncated by the divergence guard.
    pub divergence: Option<Divergence>,
}

impl Trajectory {
    pub fn from_states(dt: f64, states: &[Vec<f64>]) -> Self {
        assert!(!states.is_empty(), "a trajectory holds at least one state");
        let dim = states[0].len();
        Self {
            dt,
            dim,
            data: states.iter().flatten().copied().collect(),
            divergence: None,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (steps taken + 1).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// CSV table `t,x1,...,xn` starting at `t0`.
    pub fn to_table(&self, t0: f64) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        let mut table = Table::new(header);
        table
            .comments
            .push(format!("dt={}", crate::csvio::fmt17(self.dt)));
        for (i, s) in self.states().enumerate() {
            let mut row = Vec::with_capacity(self.dim + 1);
            row.push(t0 + i as f64 * self.dt);
            row.extend_from_slice(s);
            table.rows.push(row);
        }
        table
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CsvError> {
        self.to_table(0.0).write(w)
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self, CsvError> {
        let table = Table::read(r)?;
        let dt = table
            .comment_value("dt")
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                if table.rows.len() > 1 {
                    table.rows[1][0] - table.rows[0][0]
                } else {
                    0.0
                }
            });
        let states: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
        Ok(Self::from_states(dt, &states))
    }
}

/// `x0` followed by `n_steps` applications of [`step`].
pub fn propagate(
    model: &SystemModel,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
) -> Result<Trajectory, IntegrateError> {
    propagate_with(model, x0, dt, n_steps, kind, &PropagateOptions::default())
}

pub fn propagate_with(
    model: &SystemModel,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
    opts: &PropagateOptions,
) -> Result<Trajectory, IntegrateError> {
    model.check_dim(x0)?;
    let mut stepper = Stepper::new(model, dt, kind)?;
    let limit = opts.divergence_factor * model.domain_radius();
    let n = model.dim();
    let mut data = Vec::with_capacity((n_steps + 1) * n);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut divergence = None;
    for i in 0..n_steps {
        if !stepper.advance(&mut x) {
            return Err(IntegrateError::NonFiniteOutput {
                step: i,
                from: x0.to_vec(),
            });
        }
        data.extend_from_slice(&x);
        let norm = linalg::norm(&x);
        if norm > limit {
            divergence = Some(Divergence {
                step: i + 1,
                norm,
                limit,
            });
            break;
        }
    }
    Ok(Trajectory {
        dt,
        dim: n,
        data,
        divergence,
    })
}

/// State after `n_steps` without storing the intermediate states.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub state: Vec<f64>,
    pub divergence: Option<Divergence>,
}

pub fn terminal_state(
    model: &SystemModel,
    x0: &[f64],
    dt: f64,
    n_steps: usize,
    kind: IntegratorKind,
    opts: &PropagateOptions,
) -> Result<Terminal, IntegrateError> {
    model.check_dim(x0)?;
    let mut stepper = Stepper::new(model, dt, kind)?;
    let limit = opts.divergence_factor * model.domain_radius();
    let mut x = x0.to_vec();
    for i in 0..n_steps {
        if !stepper.advance(&mut x) {
            return Err(IntegrateError::NonFiniteOutput {
                step: i,
                from: x0.to_vec(),
            });
        }
        let norm = linalg::norm(&x);
        if norm > limit {
            return Ok(Terminal {
                state: x,
                divergence: Some(Divergence {
                    step: i + 1,
                    norm,
                    limit,
                }),
            });
        }
    }
    Ok(Terminal {
        state: x,
        divergence: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin, ModelParams, Registry};

    #[test]
    fn euler_on_linear() {
        let m = builtin("linear-1d").unwrap();
        let x = step(&m, &[1.0], 0.1, IntegratorKind::Euler).unwrap();
        assert!((x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rk4_on_linear_is_truncated_exponential() {
        let m = builtin("linear-1d").unwrap();
        let h: f64 = 0.1;
        let x = step(&m, &[1.0], h, IntegratorKind::Rk4).unwrap();
        let series = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - series).abs() < 1e-15);
        assert!((x[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn origin_is_fixed_for_sgn_cubic() {
        let m = builtin("sgn-cubic").unwrap();
        for kind in [IntegratorKind::Euler, IntegratorKind::Rk4] {
            assert_eq!(step(&m, &[0.0], 0.01, kind).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn invalid_step_size() {
        let m = builtin("linear-1d").unwrap();
        assert_eq!(
            step(&m, &[1.0], 0.0, IntegratorKind::Rk4),
            Err(IntegrateError::InvalidStep(0.0))
        );
        assert!(step(&m, &[1.0], f64::NAN, IntegratorKind::Euler).is_err());
    }

    #[test]
    fn zero_steps_is_identity() {
        let m = builtin("sgn-cubic").unwrap();
        let t = propagate(&m, &[0.7], 0.01, 0, IntegratorKind::Rk4).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.last(), &[0.7]);
    }

    #[test]
    fn linear_rk4_matches_exponential() {
        let m = builtin("linear-1d").unwrap();
        let t = propagate(&m, &[1.0], 0.01, 100, IntegratorKind::Rk4).unwrap();
        assert_eq!(t.len(), 101);
        assert!((t.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn sgn_cubic_decays_into_chatter_band() {
        let m = builtin("sgn-cubic").unwrap();
        let t = propagate(&m, &[1.4], 0.01, 500, IntegratorKind::Rk4).unwrap();
        assert!(t.last()[0].abs() <= 0.03, "{}", t.last()[0]);
        assert!(!t.diverged());
    }

    #[test]
    fn divergence_guard_truncates() {
        let params = ModelParams {
            rate: Some(-5.0),
            domain_radius: Some(1.0),
            ..Default::default()
        };
        let m = Registry::with_builtins()
            .build("linear-1d", &params)
            .unwrap();
        let t = propagate(&m, &[0.5], 0.1, 1000, IntegratorKind::Rk4).unwrap();
        let d = t.divergence.expect("should diverge");
        assert_eq!(d.limit, 10.0);
        assert!(d.norm > 10.0);
        assert_eq!(t.len(), d.step + 1);

        let loose = PropagateOptions {
            divergence_factor: 1e6,
        };
        let t = propagate_with(&m, &[0.5], 0.1, 10, IntegratorKind::Rk4, &loose).unwrap();
        assert!(!t.diverged());
        assert_eq!(t.len(), 11);
    }

    #[test]
    fn terminal_state_agrees_with_propagate() {
        let m = builtin("sgn-cubic").unwrap();
        let opts = PropagateOptions::default();
        let t = propagate(&m, &[-1.2], 0.01, 321, IntegratorKind::Rk4).unwrap();
        let e = terminal_state(&m, &[-1.2], 0.01, 321, IntegratorKind::Rk4, &opts).unwrap();
        assert_eq!(t.last(), e.state.as_slice());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = builtin("sgn-cubic").unwrap();
        let t = propagate(&m, &[1.3], 0.01, 50, IntegratorKind::Rk4).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let head = String::from_utf8(buf[..40].to_vec()).unwrap();
        assert!(head.contains("t,x1\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("RK4".parse::<IntegratorKind>(), Ok(IntegratorKind::Rk4));
        assert_eq!("euler".parse::<IntegratorKind>(), Ok(IntegratorKind::Euler));
        assert!("heun".parse::<IntegratorKind>().is_err());
        assert_eq!(IntegratorKind::Rk4.to_string(), "rk4");
    }
}
