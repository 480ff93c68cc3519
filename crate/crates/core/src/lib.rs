//! Forward-invariance certificates for dynamical systems that only exist as
//! fixed-step numerical simulators.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: vector fields with declared regularity constants `(L, M, r)`
//!   and a name-keyed registry of built-in systems.
//! - [`integrate`]: Euler and classic RK4 state-transition maps and their
//!   N-fold composition.
//! - [`bounds`]: closed-form trajectory-divergence bounds for those maps,
//!   sharpened by an exponential-stability assumption `(k, λ, r0)`.
//! - [`energy`]: quadratic energy `E(x) = ½ xᵀPx`, its bounds, and a Jacobi
//!   eigensolver for `k_E = λ_max(P)`.
//! - [`sample`]: finite δ-covering sample sets of an energy sublevel set.
//! - [`verify`]: the sample-based forward-invariance check with its
//!   adaptation loop, plus the `(N, sample count)` margin sweep.
//! - [`estimate`]: Monte-Carlo envelope checks and a heuristic fit of
//!   `(k, λ)` from simulated ensembles.
//!
//! ```
//! use simcert::bounds::{self, StabilityParams};
//! use simcert::integrate::IntegratorKind;
//!
//! let step = bounds::step_bound(0.75, 4.0, 0.01, IntegratorKind::Rk4);
//! assert_eq!(format!("{:.4}", step.multiplier), "1.0075");
//!
//! let pb = bounds::propagation_bound(0.75, 4.0, 0.01, 300, IntegratorKind::Rk4);
//! let p = StabilityParams::new(8.0 / 3.0, 3.0, 1.5).unwrap();
//! let lhs = bounds::slope_condition_lhs(1.0, &p, &pb, 3.0, 0.0);
//! assert!((lhs - 0.0447f64.sqrt()).abs() < 1e-3);
//! ```

pub mod bounds;
pub mod csvio;
pub mod dynamics;
pub mod energy;
pub mod estimate;
pub mod integrate;
pub mod linalg;
pub mod sample;
pub mod verify;

pub use bounds::{PropagationBound, StabilityParams, StepBound};
pub use dynamics::{DomainBall, ModelParams, Registry, SystemModel, VectorField};
pub use energy::EnergyForm;
pub use estimate::{EnvelopeReport, FitOptions, FittedParams};
pub use integrate::{IntegratorKind, Trajectory};
pub use sample::{GridSpacing, SampleGrid};
pub use verify::{Verdict, VerificationConfig, VerificationReport};
