//! Finite δ-covering sample sets of an energy sublevel set `S = {E ≤ ℓ}`.
//!
//! Construction: an axis-aligned lattice of pitch `h = 2ρ/√n` puts every
//! point of space within `ρ` of a lattice node (the cell half-diagonal).
//! Nodes inside `S` are kept. Nodes outside `S` but within `ρ` of it are
//! replaced by their projection onto `S`; projection onto a convex set
//! is non-expansive, so every `x ∈ S` stays within `ρ` of some sample.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::energy::EnergyForm;
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
    #[error("grid dimension {got} does not match the energy form ({expected})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "grid would hold about {estimate} points, over the cap of {cap}; raise delta or the cap"
    )]
    GridTooLarge { estimate: usize, cap: usize },
}

/// How the lattice pitch relates to the requested `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridSpacing {
    /// Covering radius `δ`: the weakest spacing that still closes the
    /// certificate's δ gap.
    #[default]
    Covering,
    /// Covering radius `δ/4`, i.e. neighbouring 1-D samples closer than `δ/2`.
    Strict,
}

impl GridSpacing {
    pub fn covering_radius(self, delta: f64) -> f64 {
        match self {
            Self::Covering => delta,
            Self::Strict => delta / 4.0,
        }
    }
}

pub const DEFAULT_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    pub spacing: GridSpacing,
    pub cap: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            spacing: GridSpacing::Covering,
            cap: DEFAULT_CAP,
        }
    }
}

/// A finite sample set with a guaranteed covering radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    /// The δ the grid was requested for.
    pub delta: f64,
    /// Radius the construction guarantees (`≤ delta`).
    pub covering_radius: f64,
    /// Per-axis lattice pitch; `0` for the single-point grid.
    pub spacing: f64,
    dim: usize,
    points: Vec<f64>,
}

impl SampleGrid {
    /// Wraps an arbitrary point list; no covering guarantee is implied.
    pub fn from_points(delta: f64, dim: usize, points: &[Vec<f64>]) -> Self {
        Self {
            delta,
            covering_radius: delta,
            spacing: 0.0,
            dim,
            points: points.iter().flatten().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + Clone {
        self.points.chunks_exact(self.dim)
    }

    pub fn par_points(&self) -> rayon::slice::ChunksExact<'_, f64> {
        self.points.par_chunks_exact(self.dim)
    }

    /// CSV table `x1,...,xn`.
    pub fn to_table(&self) -> crate::csvio::Table {
        let header = (1..=self.dim).map(|i| format!("x{i}")).collect();
        let mut t = crate::csvio::Table::new(header);
        t.comments
            .push(format!("delta={}", crate::csvio::fmt17(self.delta)));
        t.comments.push(format!(
            "covering_radius={}",
            crate::csvio::fmt17(self.covering_radius)
        ));
        t.rows = self.points().map(<[f64]>::to_vec).collect();
        t
    }
}

fn unit_ball_volume(n: usize) -> f64 {
    // V_k = 2π/k · V_{k−2}
    let (mut prev, mut cur) = (1.0, 2.0);
    if n == 0 {
        return prev;
    }
    for k in 2..=n {
        let next = 2.0 * std::f64::consts::PI / k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Builds the δ-covering grid of `S` with default options.
pub fn delta_grid(form: &EnergyForm, delta: f64, dim: usize) -> Result<SampleGrid, SampleError> {
    delta_grid_with(form, delta, dim, &GridOptions::default())
}

pub fn delta_grid_with(
    form: &EnergyForm,
    delta: f64,
    dim: usize,
    opts: &GridOptions,
) -> Result<SampleGrid, SampleError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(SampleError::InvalidDelta(delta));
    }
    if dim != form.dim() {
        return Err(SampleError::DimensionMismatch {
            expected: form.dim(),
            got: dim,
        });
    }
    let rho = opts.spacing.covering_radius(delta);
    let radius = form.bounding_radius();
    if rho >= radius {
        return Ok(SampleGrid {
            delta,
            covering_radius: rho,
            spacing: 0.0,
            dim,
            points: vec![0.0; dim],
        });
    }

    let h = 2.0 * rho / (dim as f64).sqrt();
    // expected count = vol(S)/hⁿ, vol(S) = V_n (2ℓ)^{n/2} / sqrt(det P)
    let det: f64 = form.eigen().values.iter().product();
    let vol = unit_ball_volume(dim) * (2.0 * form.level()).powf(dim as f64 / 2.0) / det.sqrt();
    let estimate = vol / h.powi(dim as i32);
    if estimate.is_nan() || estimate > opts.cap as f64 {
        return Err(SampleError::GridTooLarge {
            estimate: estimate.min(usize::MAX as f64) as usize,
            cap: opts.cap,
        });
    }

    let half = ((radius + rho) / h).ceil() as i64;
    let mut idx = vec![-half; dim];
    let mut z = vec![0.0; dim];
    let mut points = Vec::new();
    'outer: loop {
        for (zi, ii) in z.iter_mut().zip(&idx) {
            *zi = *ii as f64 * h;
        }
        if form.contains(&z) {
            points.extend_from_slice(&z);
        } else if linalg::norm(&z) <= radius + rho {
            let p = form.project(&z);
            if linalg::dist(&p, &z) <= rho {
                points.extend_from_slice(&p);
            }
        }
        if points.len() / dim > opts.cap {
            return Err(SampleError::GridTooLarge {
                estimate: points.len() / dim,
                cap: opts.cap,
            });
        }
        // odometer increment
        for i in idx.iter_mut() {
            if *i < half {
                *i += 1;
                continue 'outer;
            }
            *i = -half;
        }
        break;
    }
    Ok(SampleGrid {
        delta,
        covering_radius: rho,
        spacing: h,
        dim,
        points,
    })
}

const BRUTE_FORCE_LIMIT: usize = 10_000;

type Buckets = HashMap<Vec<i64>, Vec<usize>>;

/// Nearest-sample queries: brute force for small grids, a uniform bucket
/// hash otherwise.
pub struct NearestIndex<'a> {
    grid: &'a SampleGrid,
    buckets: Option<(f64, Buckets, i64)>,
}

impl<'a> NearestIndex<'a> {
    pub fn new(grid: &'a SampleGrid) -> Self {
        if grid.count() < BRUTE_FORCE_LIMIT {
            return Self {
                grid,
                buckets: None,
            };
        }
        let side = if grid.spacing > 0.0 {
            grid.spacing
        } else {
            grid.covering_radius
        };
        let mut map: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut extent = 0i64;
        for (i, p) in grid.points().enumerate() {
            let key: Vec<i64> = p.iter().map(|c| (c / side).floor() as i64).collect();
            extent = extent.max(key.iter().map(|k| k.abs()).max().unwrap_or(0));
            map.entry(key).or_default().push(i);
        }
        Self {
            grid,
            buckets: Some((side, map, extent)),
        }
    }

    /// Distance from `x` to the closest sample, and that sample's index.
    pub fn nearest(&self, x: &[f64]) -> (f64, usize) {
        let Some((side, map, extent)) = &self.buckets else {
            return self
                .grid
                .points()
                .enumerate()
                .map(|(i, p)| (linalg::dist(p, x), i))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("non-empty grid");
        };
        let dim = self.grid.dim();
        let home: Vec<i64> = x.iter().map(|c| (c / side).floor() as i64).collect();
        let home_extent = home.iter().map(|k| k.abs()).max().unwrap_or(0);
        let max_ring = extent + home_extent + 1;
        let mut best = (f64::INFINITY, usize::MAX);
        let mut offset = vec![0i64; dim];
        for ring in 0..=max_ring {
            // every cell at Chebyshev distance exactly `ring`
            offset.iter_mut().for_each(|o| *o = -ring);
            'cells: loop {
                if offset.iter().any(|o| o.abs() == ring) {
                    let key: Vec<i64> = home.iter().zip(&offset).map(|(h, o)| h + o).collect();
                    if let Some(ids) = map.get(&key) {
                        for &i in ids {
                            let d = linalg::dist(self.grid.point(i), x);
                            if d < best.0 {
                                best = (d, i);
                            }
                        }
                    }
                }
                for o in offset.iter_mut() {
                    if *o < ring {
                        *o += 1;
                        continue 'cells;
                    }
                    *o = -ring;
                }
                break;
            }
            // cells beyond this ring are at least `ring·side` away
            if best.0 <= ring as f64 * side {
                break;
            }
        }
        best
    }
}

/// Largest probe-to-sample distance found by random probing of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveringReport {
    pub n_probe: usize,
    pub max_gap: f64,
    pub witness: Vec<f64>,
    pub delta: f64,
}

impl CoveringReport {
    pub fn pass(&self) -> bool {
        self.max_gap <= self.delta
    }
}

/// Probes `S` uniformly (rejection sampling in the bounding box
/// `‖x‖∞ ≤ sqrt(2ℓ/λ_min)`) and reports the worst nearest-sample distance.
pub fn covering_check(
    grid: &SampleGrid,
    form: &EnergyForm,
    n_probe: usize,
    seed: u64,
) -> CoveringReport {
    assert!(n_probe >= 1, "need at least one probe");
    let dim = grid.dim();
    let r = form.bounding_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probe * dim);
    let mut x = vec![0.0; dim];
    while probes.len() < n_probe * dim {
        for c in x.iter_mut() {
            *c = rng.random_range(-r..=r);
        }
        if form.contains(&x) {
            probes.extend_from_slice(&x);
        }
    }
    let index = NearestIndex::new(grid);
    let (max_gap, at) = probes
        .par_chunks_exact(dim)
        .enumerate()
        .map(|(i, p)| (index.nearest(p).0, i))
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| match a.0.total_cmp(&b.0) {
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Equal => {
                    if a.1 <= b.1 {
                        a
                    } else {
                        b
                    }
                }
            },
        );
    CoveringReport {
        n_probe,
        max_gap,
        witness: probes[at * dim..(at + 1) * dim].to_vec(),
        delta: grid.delta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn interval() -> EnergyForm {
        EnergyForm::identity(1, 1.125).unwrap()
    }

    #[test]
    fn unit_ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_grid_has_31_points() {
        let g = delta_grid(&interval(), 0.05, 1).unwrap();
        assert!((g.spacing - 0.1).abs() < 1e-15);
        assert_eq!(g.count(), 31);
        let xs: Vec<f64> = g.points().map(|p| p[0]).collect();
        assert!(xs.iter().any(|x| (*x - 1.5).abs() < 1e-12));
        assert!(xs.iter().any(|x| (*x + 1.5).abs() < 1e-12));
    }

    #[test]
    fn coarse_delta_collapses_to_origin() {
        let g = delta_grid(&interval(), 1.5, 1).unwrap();
        assert_eq!(g.count(), 1);
        assert_eq!(g.point(0), &[0.0]);
        let report = covering_check(&g, &interval(), 10_000, 1);
        assert!(report.pass());
    }

    #[test]
    fn grid_points_lie_in_set() {
        let p = Matrix::from_row_major(vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let f = EnergyForm::new(p, 0.7).unwrap();
        let g = delta_grid(&f, 0.15, 2).unwrap();
        assert!(g.points().all(|x| f.contains(x)));
    }

    #[test]
    fn removing_every_second_point_breaks_covering() {
        let f = interval();
        let g = delta_grid(&f, 0.05, 1).unwrap();
        let thinned: Vec<Vec<f64>> = g.points().step_by(2).map(<[f64]>::to_vec).collect();
        let thin = SampleGrid::from_points(0.05, 1, &thinned);
        let report = covering_check(&thin, &f, 100_000, 3);
        assert!(!report.pass(), "max gap {}", report.max_gap);
        assert!(report.max_gap > 0.05);
    }

    #[test]
    fn errors() {
        let f = interval();
        assert_eq!(delta_grid(&f, 0.0, 1), Err(SampleError::InvalidDelta(0.0)));
        assert!(matches!(
            delta_grid(&f, 0.1, 2),
            Err(SampleError::DimensionMismatch { .. })
        ));
        let opts = GridOptions {
            cap: 100,
            ..Default::default()
        };
        assert!(matches!(
            delta_grid_with(&f, 1e-3, 1, &opts),
            Err(SampleError::GridTooLarge { cap: 100, .. })
        ));
    }

    #[test]
    fn strict_spacing_is_four_times_finer() {
        let opts = GridOptions {
            spacing: GridSpacing::Strict,
            ..Default::default()
        };
        let g = delta_grid_with(&interval(), 0.2, 1, &opts).unwrap();
        assert!((g.spacing - 0.1).abs() < 1e-15);
        assert_eq!(g.covering_radius, 0.05);
    }

    #[test]
    fn bucket_index_agrees_with_brute_force() {
        let f = EnergyForm::identity(2, 0.5).unwrap();
        let g = delta_grid(&f, 0.008, 2).unwrap();
        assert!(g.count() >= BRUTE_FORCE_LIMIT);
        let index = NearestIndex::new(&g);
        assert!(index.buckets.is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
            let fast = index.nearest(&x).0;
            let slow = g
                .points()
                .map(|p| linalg::dist(p, &x))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(fast, slow);
        }
    }
}
