//! k-nearest-neighbour estimators of differential entropy (Kozachenko-Leonenko)
//! and mutual information (Kraskov-Stögbauer-Grassberger, first variant).
//!
//! All distances are max-norm. Neighbour search sorts the points on their
//! first coordinate and sweeps outwards, pruning once the coordinate gap alone
//! exceeds the current radius. The pruning is exact: results are identical to
//! a brute-force scan.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_K_NN: usize = 3;
/// Name of the MI estimator variant, recorded in report metadata.
pub const KSG_VARIANT: &str = "KSG-1 (max-norm joint neighbourhoods, strict marginal counts)";
const JITTER_SCALE: f64 = 1e-10;

/// `n` points in `R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    points: Matrix,
}

impl SampleCloud {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::DimensionMismatch("sample cloud needs at least one coordinate".into()));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("sample cloud contains non-finite points".into()));
        }
        Ok(Self { points })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column"))
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    /// Adds i.i.d. uniform noise of half-width `1e-10 · range` per coordinate
    /// to break exact ties.
    pub fn jittered<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleCloud {
        let mut points = self.points.clone();
        for mut col in points.columns_mut() {
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            let width = JITTER_SCALE * (hi - lo);
            if width > 0.0 {
                col.mapv_inplace(|v| v + width * (2.0 * rng.gen::<f64>() - 1.0));
            }
        }
        SampleCloud { points }
    }

    /// Column-wise concatenation `[self, other]`.
    pub fn joint(&self, other: &SampleCloud) -> Result<SampleCloud> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch(format!(
                "clouds have {} and {} points",
                self.n(),
                other.n()
            )));
        }
        let points = ndarray::concatenate![ndarray::Axis(1), self.points, other.points];
        Ok(SampleCloud { points })
    }
}

/// Points re-laid out in order of their first coordinate.
struct SortedPoints {
    dim: usize,
    /// `order[r]` is the original index of the point at sorted rank `r`.
    order: Vec<usize>,
    /// Row-major coordinates in sorted order.
    coords: Vec<f64>,
}

impl SortedPoints {
    fn new(points: &Matrix) -> Self {
        let (n, dim) = points.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| points[[a, 0]].total_cmp(&points[[b, 0]]).then(a.cmp(&b)));
        let mut coords = Vec::with_capacity(n * dim);
        for &i in &order {
            coords.extend(points.row(i).iter());
        }
        Self { dim, order, coords }
    }

    #[inline]
    fn point(&self, r: usize) -> &[f64] {
        &self.coords[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    fn dist(&self, a: usize, b: usize) -> f64 {
        self.point(a)
            .iter()
            .zip(self.point(b))
            .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
    }

    #[inline]
    fn gap(&self, a: usize, b: usize) -> f64 {
        (self.coords[a * self.dim] - self.coords[b * self.dim]).abs()
    }

    /// Distance from every point to its `k`-th nearest other point.
    fn kth_distances(&self, k: usize) -> Vec<f64> {
        let n = self.order.len();
        let mut out = vec![0.0; n];
        // `best` holds the k smallest distances seen so far, ascending.
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        for r in 0..n {
            best.clear();
            let consider = |j: usize, best: &mut Vec<f64>| -> bool {
                if best.len() == k && self.gap(r, j) >= best[k - 1] {
                    return false;
                }
                let d = self.dist(r, j);
                if best.len() < k || d < best[k - 1] {
                    let pos = best.partition_point(|&b| b <= d);
                    best.insert(pos, d);
                    best.truncate(k);
                }
                true
            };
            let mut lo = r;
            let mut hi = r + 1;
            let (mut left_open, mut right_open) = (r > 0, hi < n);
            while left_open || right_open {
                if left_open {
                    lo -= 1;
                    left_open = consider(lo, &mut best) && lo > 0;
                }
                if right_open {
                    right_open = consider(hi, &mut best) && hi + 1 < n;
                    hi += 1;
                }
            }
            out[self.order[r]] = best[k - 1];
        }
        out
    }

    /// For each original point `i`, the number of other points strictly
    /// within `radius[i]`.
    fn count_within(&self, radius: &[f64]) -> Vec<usize> {
        let n = self.order.len();
        let mut out = vec![0; n];
        for r in 0..n {
            let eps = radius[self.order[r]];
            let mut count = 0;
            for j in (0..r).rev() {
                if self.gap(r, j) >= eps {
                    break;
                }
                if self.dist(r, j) < eps {
                    count += 1;
                }
            }
            for j in (r + 1)..n {
                if self.gap(r, j) >= eps {
                    break;
                }
                if self.dist(r, j) < eps {
                    count += 1;
                }
            }
            out[self.order[r]] = count;
        }
        out
    }
}

/// `ψ(1), ..., ψ(n)` via `ψ(j+1) = ψ(j) + 1/j`; index 0 is unused.
fn digamma_table(n: usize) -> Vec<f64> {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut table = vec![f64::NAN; n + 1];
    if n >= 1 {
        table[1] = -EULER_GAMMA;
    }
    for j in 1..n {
        table[j + 1] = table[j] + 1.0 / j as f64;
    }
    table
}

fn check_k(n: usize, k_nn: usize) -> Result<()> {
    if k_nn == 0 || k_nn >= n {
        return Err(Error::InvalidArgument(format!("need 1 <= k_nn < n, got k_nn={k_nn}, n={n}")));
    }
    Ok(())
}

/// Distance from each point to its `k_nn`-th neighbour (max-norm).
pub fn kth_neighbor_distances(cloud: &SampleCloud, k_nn: usize) -> Result<Vec<f64>> {
    check_k(cloud.n(), k_nn)?;
    Ok(SortedPoints::new(cloud.points()).kth_distances(k_nn))
}

/// Kozachenko-Leonenko entropy estimate in nats:
/// `ψ(n) - ψ(k) + m·log 2 + (m/n) Σ log ε_i`.
pub fn kl_entropy(cloud: &SampleCloud, k_nn: usize) -> Result<f64> {
    let n = cloud.n();
    let eps = kth_neighbor_distances(cloud, k_nn)?;
    if eps.iter().any(|&e| e == 0.0) {
        return Err(Error::DegenerateCloud(format!(
            "duplicate points: some {k_nn}-th neighbour distance is zero"
        )));
    }
    let psi = digamma_table(n);
    let m = cloud.dim() as f64;
    let sum_log: f64 = eps.iter().map(|e| e.ln()).sum();
    Ok(psi[n] - psi[k_nn] + m * std::f64::consts::LN_2 + m * sum_log / n as f64)
}

/// KSG mutual information estimate in nats (first variant):
/// `ψ(k) + ψ(n) - mean_i[ψ(n_x(i) + 1) + ψ(n_y(i) + 1)]`.
///
/// The raw value is returned; it can be slightly negative.
pub fn ksg_mi(x: &SampleCloud, y: &SampleCloud, k_nn: usize) -> Result<f64> {
    let n = x.n();
    if y.n() != n {
        return Err(Error::DimensionMismatch(format!("x has {n} points, y has {}", y.n())));
    }
    check_k(n, k_nn)?;
    let joint = SortedPoints::new(x.joint(y)?.points());
    let eps = joint.kth_distances(k_nn);
    if eps.iter().any(|&e| e == 0.0) {
        return Err(Error::DegenerateCloud(format!(
            "duplicate joint points: some {k_nn}-th neighbour distance is zero"
        )));
    }
    let nx = SortedPoints::new(x.points()).count_within(&eps);
    let ny = SortedPoints::new(y.points()).count_within(&eps);
    let psi = digamma_table(n + 1);
    let mean: f64 = nx.iter().zip(&ny).map(|(&a, &b)| psi[a + 1] + psi[b + 1]).sum::<f64>() / n as f64;
    Ok(psi[k_nn] + psi[n] - mean)
}
