//! Quadratic energy `E(x) = ½ xᵀPx`, its sublevel set `{E ≤ ℓ}`, and the
//! energy bounds implied by exponential stability.

use thiserror::Error;

use crate::bounds::StabilityParams;
use crate::integrate::Trajectory;
use crate::linalg::{self, jacobi_eigen, LinalgError, Matrix, SymEigen};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("P is not symmetric: entries ({row},{col}) differ by {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("P is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("energy level must be positive and finite, got {0}")]
    InvalidLevel(f64),
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for EnergyError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotSymmetric { row, col, gap } => Self::NotSymmetric { row, col, gap },
            other => Self::Linalg(other),
        }
    }
}

/// Largest eigenvalue of a symmetric matrix (cyclic Jacobi).
pub fn max_eigenvalue(p: &Matrix) -> Result<f64, EnergyError> {
    Ok(jacobi_eigen(p)?.max())
}

/// A positive-definite quadratic energy together with the level `ℓ` that
/// defines the candidate invariant set `S = {x : E(x) ≤ ℓ}`.
#[derive(Debug, Clone)]
pub struct EnergyForm {
    p: Matrix,
    eigen: SymEigen,
    level: f64,
}

impl EnergyForm {
    pub fn new(p: Matrix, level: f64) -> Result<Self, EnergyError> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(EnergyError::InvalidLevel(level));
        }
        let eigen = jacobi_eigen(&p)?;
        if eigen.min() <= 0.0 {
            return Err(EnergyError::NotPositiveDefinite(eigen.min()));
        }
        Ok(Self { p, eigen, level })
    }

    /// `E(x) = ½ xᵀ I x` on `dim` coordinates.
    pub fn identity(dim: usize, level: f64) -> Result<Self, EnergyError> {
        Self::new(Matrix::identity(dim), level)
    }

    pub fn with_level(&self, level: f64) -> Result<Self, EnergyError> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(EnergyError::InvalidLevel(level));
        }
        Ok(Self {
            level,
            ..self.clone()
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// `k_E = λ_max(P)`.
    pub fn k_e(&self) -> f64 {
        self.eigen.max()
    }

    /// `λ_min(P)`.
    pub fn k_min(&self) -> f64 {
        self.eigen.min()
    }

    pub fn eigen(&self) -> &SymEigen {
        &self.eigen
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * self.p.quadratic_form(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.energy(x) <= self.level
    }

    /// Radius of the smallest origin-centred ball containing `S`:
    /// `sqrt(2ℓ / λ_min)`.
    pub fn bounding_radius(&self) -> f64 {
        (2.0 * self.level / self.k_min()).sqrt()
    }

    /// Closest point of `S` to `z` (identity on `S`).
    ///
    /// In the eigenbasis the projection is `yᵢ/(1 + μλᵢ)` with `μ ≥ 0` the
    /// root of `½Σλᵢyᵢ²/(1 + μλᵢ)² = ℓ`, found by bisection. The returned
    /// point is nudged inward if rounding left it a hair outside `S`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        if self.contains(z) {
            return z.to_vec();
        }
        let n = self.dim();
        let q = &self.eigen.vectors;
        let lam = &self.eigen.values;
        let y: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| q.get(i, j) * z[i]).sum())
            .collect();
        let excess = |mu: f64| {
            0.5 * y
                .iter()
                .zip(lam)
                .map(|(yi, li)| li * yi * yi / ((1.0 + mu * li) * (1.0 + mu * li)))
                .sum::<f64>()
                - self.level
        };
        let (mut lo, mut hi) = (0.0f64, 1.0 / self.k_min());
        while excess(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let shrunk: Vec<f64> = y
            .iter()
            .zip(lam)
            .map(|(yi, li)| yi / (1.0 + hi * li))
            .collect();
        let mut x: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| q.get(i, j) * shrunk[j]).sum())
            .collect();
        let mut scale = 1.0;
        while !self.contains(&x) {
            scale *= 1.0 - 4.0 * f64::EPSILON;
            let e = self.energy(&x);
            let s = (self.level / e).sqrt() * scale;
            x.iter_mut().for_each(|v| *v *= s);
        }
        x
    }
}

/// `(k_E/2)·k²·e^{−2λ·elapsed}·‖x0‖²`.
pub fn energy_bound(form: &EnergyForm, p: &StabilityParams, x0: &[f64], elapsed: f64) -> f64 {
    let r = linalg::norm(x0);
    0.5 * form.k_e() * p.k * p.k * (-2.0 * p.lambda * elapsed).exp() * r * r
}

/// Trapezoidal quadrature of `E` along a trajectory.
pub fn energy_integral(form: &EnergyForm, traj: &Trajectory) -> f64 {
    let dt = traj.dt();
    let mut prev = form.energy(traj.first());
    let mut acc = 0.0;
    for s in traj.states().skip(1) {
        let e = form.energy(s);
        acc += 0.5 * (prev + e) * dt;
        prev = e;
    }
    acc
}

/// `T·(k_E/2)·k²·‖x0‖²`: the energy bound at its supremum (elapsed 0),
/// integrated over the horizon.
pub fn energy_integral_bound(
    form: &EnergyForm,
    p: &StabilityParams,
    x0: &[f64],
    horizon: f64,
) -> f64 {
    horizon * energy_bound(form, p, x0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin;
    use crate::integrate::{propagate, IntegratorKind};
    use proptest::prelude::*;

    fn scalar(level: f64) -> EnergyForm {
        EnergyForm::identity(1, level).unwrap()
    }

    #[test]
    fn energy_values() {
        assert_eq!(scalar(1.0).energy(&[1.5]), 1.125);
        let f = EnergyForm::new(Matrix::diag(&[2.0, 3.0]), 1.0).unwrap();
        assert_eq!(f.energy(&[1.0, 1.0]), 2.5);
        assert_eq!(f.energy(&[0.0, 0.0]), 0.0);
        assert_eq!(f.k_e(), 3.0);
        assert_eq!(f.k_min(), 2.0);
    }

    #[test]
    fn max_eigenvalue_simple() {
        assert_eq!(max_eigenvalue(&Matrix::identity(1)).unwrap(), 1.0);
        assert_eq!(max_eigenvalue(&Matrix::diag(&[2.0, 3.0])).unwrap(), 3.0);
        let asym = Matrix::from_row_major(vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(
            max_eigenvalue(&asym),
            Err(EnergyError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn rejects_indefinite_and_bad_level() {
        let indef = Matrix::diag(&[1.0, -1.0]);
        assert!(matches!(
            EnergyForm::new(indef, 1.0),
            Err(EnergyError::NotPositiveDefinite(_))
        ));
        assert_eq!(
            EnergyForm::identity(2, 0.0).unwrap_err(),
            EnergyError::InvalidLevel(0.0)
        );
    }

    #[test]
    fn energy_bound_values() {
        let p = StabilityParams::new(8.0 / 3.0, 3.0, 1.5).unwrap();
        let f = scalar(1.125);
        for tau in [0.0, 0.1, 0.5, 2.0] {
            let expected = 32.0 / 9.0 * (-6.0f64 * tau).exp() * 0.81;
            assert!((energy_bound(&f, &p, &[0.9], tau) - expected).abs() < 1e-14);
        }
        let unit = StabilityParams::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(energy_bound(&f, &unit, &[0.7], 0.0), f.energy(&[0.7]));
        assert_eq!(energy_bound(&f, &p, &[0.0], 0.3), 0.0);
    }

    #[test]
    fn energy_integral_simple_cases() {
        let f = EnergyForm::new(Matrix::diag(&[2.0, 1.0]), 1.0).unwrap();
        let x = vec![0.3, -0.4];
        let t = Trajectory::from_states(0.05, &vec![x.clone(); 11]);
        assert!((energy_integral(&f, &t) - 10.0 * 0.05 * f.energy(&x)).abs() < 1e-15);
        let zero = Trajectory::from_states(0.05, &vec![vec![0.0, 0.0]; 5]);
        assert_eq!(energy_integral(&f, &zero), 0.0);
    }

    #[test]
    fn energy_integral_on_linear_decay() {
        let m = builtin("linear-1d").unwrap();
        let t = propagate(&m, &[1.0], 1e-3, 1000, IntegratorKind::Rk4).unwrap();
        let exact = 0.25 * (1.0 - (-2.0f64).exp());
        assert!((energy_integral(&scalar(1.0), &t) - exact).abs() < 1e-5);
    }

    #[test]
    fn energy_integral_is_second_order() {
        let m = builtin("linear-1d").unwrap();
        let exact = 0.25 * (1.0 - (-2.0f64).exp());
        let err = |n: usize| {
            let t = propagate(&m, &[1.0], 1.0 / n as f64, n, IntegratorKind::Rk4).unwrap();
            (energy_integral(&scalar(1.0), &t) - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn energy_integral_bound_values() {
        let p = StabilityParams::new(8.0 / 3.0, 3.0, 1.5).unwrap();
        let f = scalar(1.125);
        assert_eq!(energy_integral_bound(&f, &p, &[1.0], 0.0), 0.0);
        assert!((energy_integral_bound(&f, &p, &[1.0], 2.0) - 64.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn projection_lands_on_boundary() {
        let p = Matrix::from_row_major(vec![3.0, 1.0, 1.0, 2.0]).unwrap();
        let f = EnergyForm::new(p, 0.5).unwrap();
        let z = [2.0, -1.5];
        let x = f.project(&z);
        assert!(f.contains(&x));
        assert!((f.energy(&x) - 0.5).abs() < 1e-12);
        // optimality: z − x is parallel to the outward normal P x
        let mut px = [0.0; 2];
        f.matrix().mul_vec(&x, &mut px);
        let r = [z[0] - x[0], z[1] - x[1]];
        assert!((r[0] * px[1] - r[1] * px[0]).abs() < 1e-9);
        assert_eq!(f.project(&[0.1, 0.1]), vec![0.1, 0.1]);
    }

    proptest! {
        #[test]
        fn energy_below_rayleigh_bound(
            a in -2.0f64..2.0, c in 0.5f64..3.0, d in 0.0f64..2.0, x in -5.0f64..5.0, y in -5.0f64..5.0,
        ) {
            // diagonally dominant ⇒ positive definite
            let p = Matrix::from_row_major(vec![c + a.abs() + d, a, a, c + a.abs()]).unwrap();
            let f = EnergyForm::new(p, 1.0).unwrap();
            let v = [x, y];
            let r2 = x * x + y * y;
            prop_assert!(f.energy(&v) <= 0.5 * f.k_e() * r2 * (1.0 + 1e-12) + 1e-300);
            prop_assert!(f.energy(&v) >= 0.5 * f.k_min() * r2 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn rayleigh_equality_on_top_eigenvector() {
        let p = Matrix::from_row_major(vec![3.0, 1.0, 1.0, 2.0]).unwrap();
        let f = EnergyForm::new(p, 1.0).unwrap();
        let v = f.eigen().vector(1);
        assert!((f.energy(&v) - 0.5 * f.k_e()).abs() < 1e-14);
    }
}
