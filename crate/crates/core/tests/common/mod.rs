//! Test-side oracles, written without reference to the library code paths
//! they check.

#![allow(dead_code)]

pub const L: f64 = 0.75;
pub const M: f64 = 4.0;
pub const R0: f64 = 1.5;
pub const K: f64 = 8.0 / 3.0;
pub const LAMBDA: f64 = 3.0;
pub const ELL: f64 = 1.125;

pub fn sgn_cubic(x: f64) -> f64 {
    let s = if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    };
    x.powi(3) / 3.0 - 2.0 * s
}

pub fn rk4_scalar(f: impl Fn(f64) -> f64, mut x: f64, dt: f64, n: usize) -> f64 {
    for _ in 0..n {
        let k1 = f(x);
        let k2 = f(x + 0.5 * dt * k1);
        let k3 = f(x + 0.5 * dt * k2);
        let k4 = f(x + dt * k3);
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

/// Taylor-series α written out term by term.
pub fn alpha_series(l: f64, dt: f64) -> f64 {
    dt + l * dt.powi(2) / 2.0 + l.powi(2) * dt.powi(3) / 6.0 + l.powi(3) * dt.powi(4) / 24.0
}

/// `(m^N, c·Σ_{i<N} m^i)` by repeated multiplication and compensated
/// summation.
pub fn loop_ab(m: f64, c: f64, n: usize) -> (f64, f64) {
    let mut pow = 1.0;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let t = sum + pow;
        if sum.abs() >= pow.abs() {
            comp += (sum - t) + pow;
        } else {
            comp += (pow - t) + sum;
        }
        sum = t;
        pow *= m;
    }
    (pow, c * (sum + comp))
}

/// Rounds toward zero at `dp` decimals and prints with exactly `dp` digits.
pub fn truncate(x: f64, dp: i32) -> String {
    let s = 10f64.powi(dp);
    format!("{:.*}", dp as usize, (x * s).floor() / s)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            d = -d;
        }
        let p = a[col * n + col];
        d *= p;
        for i in col + 1..n {
            let f = a[i * n + col] / p;
            for j in col..n {
                a[i * n + j] -= f * a[col * n + j];
            }
        }
    }
    d
}

/// Largest root of `det(A − μI)` for symmetric `A`: scan down from the
/// Gershgorin bound to the first sign change, then bisect.
pub fn largest_eigenvalue_charpoly(a: &[f64], n: usize) -> f64 {
    let p = |mu: f64| {
        let mut b = a.to_vec();
        for i in 0..n {
            b[i * n + i] -= mu;
        }
        det(b, n)
    };
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
        hi = hi.max(a[i * n + i] + off);
        lo = lo.min(a[i * n + i] - off);
    }
    let (top, bottom) = (hi + 1e-9, lo - 1e-9);
    let sign_top = p(top).signum();
    let cells = 20_000;
    let h = (top - bottom) / cells as f64;
    let mut upper = top;
    let mut lower = top;
    for i in 1..=cells {
        let mu = top - i as f64 * h;
        if p(mu).signum() != sign_top {
            lower = mu;
            break;
        }
        upper = mu;
    }
    assert!(lower < upper, "no sign change found");
    for _ in 0..200 {
        let mid = 0.5 * (lower + upper);
        if p(mid).signum() == sign_top {
            upper = mid;
        } else {
            lower = mid;
        }
    }
    0.5 * (lower + upper)
}
