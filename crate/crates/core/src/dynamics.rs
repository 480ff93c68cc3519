//! System models: an autonomous vector field `ẋ = f(x)` together with the
//! regularity constants the bounds are built from.
//!
//! `L` and `M` are declared by whoever registers the model and must satisfy
//! `‖f(x) − f(y)‖ ≤ L‖x − y‖ + M` on the open ball of radius `r`. They are
//! not derived here; [`empirical_lm_check`] tries to falsify them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid model `{name}`: {reason}")]
    InvalidModel { name: String, reason: String },
    #[error("vector field of `{name}` returned a non-finite value at {x:?}")]
    NonFiniteOutput { name: String, x: Vec<f64> },
    #[error("state has dimension {got}, model `{name}` expects {expected}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A deterministic map from state to derivative.
///
/// Implementations must be pure: the same input bits produce the same
/// output bits on every call and thread.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// Sign with `sgn(0) = 0`, so the origin is an exact fixed point of any
/// explicit integrator applied to a field built from it.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `ẋ = −2·sgn(x) + x³/3`: discontinuous at the origin, with a sliding-mode
/// equilibrium there.
#[derive(Debug, Clone, Copy, Default)]
pub struct SgnCubic;

impl VectorField for SgnCubic {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * sgn(x[0]) + x[0] * x[0] * x[0] / 3.0;
    }
}

/// `ẋ = −rate·x` in one dimension.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLinear {
    pub rate: f64,
}

impl VectorField for ScalarLinear {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -self.rate * x[0];
    }
}

/// `ẋ = A x`.
#[derive(Debug, Clone)]
pub struct MatrixLinear {
    pub a: Matrix,
}

impl VectorField for MatrixLinear {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.a.mul_vec(x, out);
    }
}

/// Euclidean ball centred at the origin. Membership is closed: `‖x‖ ≤ radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBall {
    pub radius: f64,
}

impl DomainBall {
    pub fn new(radius: f64) -> Self {
        Self { radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        linalg::norm(x) <= self.radius
    }

    /// A point drawn uniformly from the ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        self.sample_shell(rng, dim, 0.0, self.radius)
    }

    /// A point drawn uniformly (by volume) from `inner ≤ ‖x‖ ≤ outer`.
    pub fn sample_shell<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        dim: usize,
        inner: f64,
        outer: f64,
    ) -> Vec<f64> {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut len = linalg::norm(&dir);
        while len == 0.0 {
            dir = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            len = linalg::norm(&dir);
        }
        let d = dim as f64;
        let u: f64 = rng.random();
        let r = (inner.powf(d) + u * (outer.powf(d) - inner.powf(d))).powf(1.0 / d);
        dir.iter().map(|c| c / len * r).collect()
    }
}

/// A registered dynamical system: the vector field plus its declared
/// domain and regularity constants.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    dim: usize,
    field: Arc<dyn VectorField>,
    domain: DomainBall,
    lipschitz: f64,
    jump: f64,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain_radius", &self.domain.radius)
            .field("lipschitz", &self.lipschitz)
            .field("jump", &self.jump)
            .finish()
    }
}

impl SystemModel {
    /// Validates the declared constants and that the origin is an exact
    /// equilibrium of the stored field.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        field: Arc<dyn VectorField>,
        domain_radius: f64,
        lipschitz: f64,
        jump: f64,
    ) -> Result<Self, DynamicsError> {
        let name = name.into();
        let invalid = |reason: &str| DynamicsError::InvalidModel {
            name: name.clone(),
            reason: reason.to_string(),
        };
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(domain_radius > 0.0 && domain_radius.is_finite()) {
            return Err(invalid("domain radius must be positive and finite"));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(invalid("Lipschitz constant must be nonnegative"));
        }
        if !(jump >= 0.0 && jump.is_finite()) {
            return Err(invalid("discontinuity bound must be nonnegative"));
        }
        let mut at_origin = vec![f64::NAN; dim];
        field.eval(&vec![0.0; dim], &mut at_origin);
        if at_origin.iter().any(|v| *v != 0.0) {
            return Err(invalid("field must vanish at the origin"));
        }
        Ok(Self {
            name,
            dim,
            field,
            domain: DomainBall::new(domain_radius),
            lipschitz,
            jump,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> DomainBall {
        self.domain
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain.radius
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn jump(&self) -> f64 {
        self.jump
    }

    /// Same field and domain with different declared constants.
    pub fn with_constants(&self, lipschitz: f64, jump: f64) -> Result<Self, DynamicsError> {
        Self::new(
            self.name.clone(),
            self.dim,
            Arc::clone(&self.field),
            self.domain.radius,
            lipschitz,
            jump,
        )
    }

    /// Raw evaluation without domain or finiteness checks.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.field.eval(x, out);
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<(), DynamicsError> {
        if x.len() != self.dim {
            return Err(DynamicsError::DimensionMismatch {
                name: self.name.clone(),
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Field value at a state, with a flag for states outside the declared domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: Vec<f64>,
    pub out_of_domain: bool,
}

/// Evaluates `f(x)`. Leaving the domain is reported, not fatal; a
/// non-finite derivative is.
pub fn eval_dynamics(model: &SystemModel, x: &[f64]) -> Result<Evaluation, DynamicsError> {
    model.check_dim(x)?;
    let mut value = vec![0.0; model.dim];
    model.eval_into(x, &mut value);
    if value.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NonFiniteOutput {
            name: model.name.clone(),
            x: x.to_vec(),
        });
    }
    Ok(Evaluation {
        value,
        out_of_domain: linalg::norm(x) > model.domain.radius,
    })
}

/// Worst violation of the declared `(L, M)` inequality over random pairs.
#[derive(Debug, Clone)]
pub struct LmCheckReport {
    pub pairs: usize,
    /// `max ‖f(x) − f(y)‖ − L‖x − y‖ − M`; nonpositive means no violation found.
    pub max_residual: f64,
    pub witness: (Vec<f64>, Vec<f64>),
}

impl LmCheckReport {
    pub fn consistent(&self) -> bool {
        self.max_residual <= 0.0
    }
}

/// Samples `n_pairs` pairs uniformly in the model's domain and reports the
/// largest residual of `‖f(x) − f(y)‖ ≤ L‖x − y‖ + M`.
pub fn empirical_lm_check(model: &SystemModel, n_pairs: usize, seed: u64) -> LmCheckReport {
    assert!(n_pairs >= 1, "need at least one pair");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.dim;
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut best = LmCheckReport {
        pairs: n_pairs,
        max_residual: f64::NEG_INFINITY,
        witness: (vec![0.0; n], vec![0.0; n]),
    };
    for _ in 0..n_pairs {
        let x = model.domain.sample(&mut rng, n);
        let y = model.domain.sample(&mut rng, n);
        model.eval_into(&x, &mut fx);
        model.eval_into(&y, &mut fy);
        let residual = linalg::dist(&fx, &fy) - model.lipschitz * linalg::dist(&x, &y) - model.jump;
        if residual > best.max_residual {
            best.max_residual = residual;
            best.witness = (x, y);
        }
    }
    best
}

/// Optional per-model settings, typically read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    /// Decay rate for `linear-1d` (`ẋ = −rate·x`). Negative values give an
    /// unstable system.
    pub rate: Option<f64>,
    /// Row-major system matrix for `linear-nd`.
    pub matrix: Option<Vec<f64>>,
    pub domain_radius: Option<f64>,
    pub lipschitz: Option<f64>,
    pub jump: Option<f64>,
}

type Constructor = Box<dyn Fn(&ModelParams) -> Result<SystemModel, DynamicsError> + Send + Sync>;

/// Models keyed by name.
pub struct Registry {
    entries: BTreeMap<String, Constructor>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Default domain radius for the linear built-ins.
pub const LINEAR_DEFAULT_RADIUS: f64 = 10.0;

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// `sgn-cubic`, `linear-1d` and `linear-nd`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("sgn-cubic", |p| {
            SystemModel::new(
                "sgn-cubic",
                1,
                Arc::new(SgnCubic),
                p.domain_radius.unwrap_or(1.5),
                p.lipschitz.unwrap_or(0.75),
                p.jump.unwrap_or(4.0),
            )
        });
        reg.register("linear-1d", |p| {
            let rate = p.rate.unwrap_or(1.0);
            SystemModel::new(
                "linear-1d",
                1,
                Arc::new(ScalarLinear { rate }),
                p.domain_radius.unwrap_or(LINEAR_DEFAULT_RADIUS),
                p.lipschitz.unwrap_or(rate.abs()),
                p.jump.unwrap_or(0.0),
            )
        });
        reg.register("linear-nd", |p| {
            let data = p
                .matrix
                .clone()
                .ok_or_else(|| DynamicsError::InvalidModel {
                    name: "linear-nd".into(),
                    reason: "a row-major `matrix` is required".into(),
                })?;
            let a = Matrix::from_row_major(data)?;
            let lipschitz = match p.lipschitz {
                Some(l) => l,
                None => linalg::spectral_norm(&a)?,
            };
            let dim = a.dim();
            SystemModel::new(
                "linear-nd",
                dim,
                Arc::new(MatrixLinear { a }),
                p.domain_radius.unwrap_or(LINEAR_DEFAULT_RADIUS),
                lipschitz,
                p.jump.unwrap_or(0.0),
            )
        });
        reg
    }

    pub fn register<F>(&mut self, name: &str, ctor: F)
    where
        F: Fn(&ModelParams) -> Result<SystemModel, DynamicsError> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(ctor));
    }

    pub fn build(&self, name: &str, params: &ModelParams) -> Result<SystemModel, DynamicsError> {
        let ctor = self
            .entries
            .get(name)
            .ok_or_else(|| DynamicsError::UnknownModel(name.to_string()))?;
        ctor(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Shorthand for building a built-in model with default parameters.
pub fn builtin(name: &str) -> Result<SystemModel, DynamicsError> {
    Registry::with_builtins().build(name, &ModelParams::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgn_cubic() -> SystemModel {
        builtin("sgn-cubic").unwrap()
    }

    #[test]
    fn sgn_cubic_point_values() {
        let m = sgn_cubic();
        let at = |x: f64| eval_dynamics(&m, &[x]).unwrap().value[0];
        assert_eq!(at(1.0), -2.0 + 1.0 / 3.0);
        assert!((at(1.0) + 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(at(0.0), 0.0);
        assert_eq!(at(-0.0), 0.0);
        assert_eq!(at(-1.5), 0.875);
    }

    #[test]
    fn out_of_domain_is_flagged_not_fatal() {
        let m = sgn_cubic();
        let e = eval_dynamics(&m, &[2.0]).unwrap();
        assert!(e.out_of_domain);
        assert!(!eval_dynamics(&m, &[1.5]).unwrap().out_of_domain);
    }

    #[derive(Debug)]
    struct Blowup;
    impl VectorField for Blowup {
        fn eval(&self, x: &[f64], out: &mut [f64]) {
            out[0] = if x[0] == 0.0 { 0.0 } else { 1.0 / (x[0] - 1.0) };
        }
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let m = SystemModel::new("blowup", 1, Arc::new(Blowup), 2.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            eval_dynamics(&m, &[1.0]),
            Err(DynamicsError::NonFiniteOutput { .. })
        ));
    }

    #[test]
    fn field_must_vanish_at_origin() {
        #[derive(Debug)]
        struct Drift;
        impl VectorField for Drift {
            fn eval(&self, _x: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
        }
        assert!(SystemModel::new("drift", 1, Arc::new(Drift), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            eval_dynamics(&sgn_cubic(), &[1.0, 2.0]),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn declared_constants_hold_for_sgn_cubic() {
        let report = empirical_lm_check(&sgn_cubic(), 100_000, 7);
        assert!(report.consistent(), "residual {}", report.max_residual);
    }

    #[test]
    fn understated_jump_is_caught() {
        let m = sgn_cubic().with_constants(0.75, 0.0).unwrap();
        let report = empirical_lm_check(&m, 100_000, 7);
        assert!(report.max_residual > 3.5, "{}", report.max_residual);
        let (x, y) = &report.witness;
        assert!(x[0] * y[0] < 0.0, "witness should straddle the switch");
    }

    #[test]
    fn linear_model_is_exactly_lipschitz() {
        let m = builtin("linear-1d").unwrap();
        assert_eq!(m.lipschitz(), 1.0);
        assert!(empirical_lm_check(&m, 10_000, 3).consistent());
    }

    #[test]
    fn linear_nd_uses_spectral_norm() {
        let params = ModelParams {
            matrix: Some(vec![-1.0, 2.0, 0.0, -3.0]),
            ..Default::default()
        };
        let m = Registry::with_builtins()
            .build("linear-nd", &params)
            .unwrap();
        assert_eq!(m.dim(), 2);
        assert!(empirical_lm_check(&m, 20_000, 11).consistent());
        let e = eval_dynamics(&m, &[1.0, 1.0]).unwrap();
        assert_eq!(e.value, vec![1.0, -3.0]);
    }

    #[test]
    fn unknown_model() {
        assert_eq!(
            builtin("van-der-pol").unwrap_err(),
            DynamicsError::UnknownModel("van-der-pol".into())
        );
    }

    #[test]
    fn shell_samples_stay_in_shell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ball = DomainBall::new(2.0);
        for _ in 0..1000 {
            let x = ball.sample_shell(&mut rng, 3, 1.8, 2.0);
            let r = linalg::norm(&x);
            assert!((1.8 - 1e-12..=2.0 + 1e-12).contains(&r));
        }
    }
}
