//! Closed forms for jointly Gaussian vectors.
//!
//! For `(X, Y)` jointly Gaussian the max-sliced mutual information is a
//! function of the canonical correlations only,
//!
//! ```text
//! mSMI_k(X; Y) = -1/2 · Σ_{i≤k} log(1 - σ_i(T)²),   T = Σ_X^{-1/2} Σ_XY Σ_Y^{-1/2},
//! ```
//!
//! and the optimal slices are the CCA directions. The same machinery gives
//! the full Gaussian mutual information (`k = min(d_x, d_y)`) and the
//! max-sliced entropy, which picks the top principal directions.
//!
//! Population models built by hand use no ridge. Models fitted from samples
//! can be whitened with a small ridge through the `*_ridged` variants; see
//! [`default_ridge`](crate::linalg::default_ridge).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::datagen::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, max_abs_diff, nested, spd_inv_sqrt, stiefel_project, svd_top_k, sym_eigen, Matrix, SpdMatrix,
    StiefelMatrix,
};

/// Canonical correlations are clipped here before entering `log(1 - σ²)`.
pub const CORRELATION_CLIP: f64 = 1.0 - 1e-12;
const PSD_TOL: f64 = 1e-8;

/// Means and covariance blocks of a joint Gaussian on `R^{d_x} × R^{d_y}`.
///
/// Serializes as nested arrays; deserializing runs the same checks as
/// [`GaussianJointModel::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRepr", try_from = "ModelRepr")]
pub struct GaussianJointModel {
    mean_x: Array1<f64>,
    mean_y: Array1<f64>,
    cov_x: Matrix,
    cov_y: Matrix,
    cross_cov: Matrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    #[serde(with = "nested::vector")]
    mean_x: Array1<f64>,
    #[serde(with = "nested::vector")]
    mean_y: Array1<f64>,
    #[serde(with = "nested::matrix")]
    cov_x: Matrix,
    #[serde(with = "nested::matrix")]
    cov_y: Matrix,
    #[serde(with = "nested::matrix")]
    cross_cov: Matrix,
}

impl From<GaussianJointModel> for ModelRepr {
    fn from(m: GaussianJointModel) -> Self {
        Self { mean_x: m.mean_x, mean_y: m.mean_y, cov_x: m.cov_x, cov_y: m.cov_y, cross_cov: m.cross_cov }
    }
}

impl TryFrom<ModelRepr> for GaussianJointModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        Self::new(r.mean_x, r.mean_y, r.cov_x, r.cov_y, r.cross_cov)
    }
}

impl GaussianJointModel {
    /// Validates shapes and that the joint covariance is positive
    /// semidefinite (smallest eigenvalue ≥ -1e-8).
    pub fn new(
        mean_x: Array1<f64>,
        mean_y: Array1<f64>,
        cov_x: Matrix,
        cov_y: Matrix,
        cross_cov: Matrix,
    ) -> Result<Self> {
        let (dx, dy) = (mean_x.len(), mean_y.len());
        if cov_x.dim() != (dx, dx) || cov_y.dim() != (dy, dy) || cross_cov.dim() != (dx, dy) {
            return Err(Error::DimensionMismatch(format!(
                "covariance blocks {:?}, {:?}, {:?} do not match means of length {dx}, {dy}",
                cov_x.dim(),
                cov_y.dim(),
                cross_cov.dim()
            )));
        }
        let model = Self { mean_x, mean_y, cov_x, cov_y, cross_cov };
        let joint = model.joint_covariance();
        let eig = sym_eigen(&joint)?;
        let min = eig.values[eig.values.len() - 1];
        if min < -PSD_TOL {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(model)
    }

    /// Zero means, identity marginal covariances and cross-covariance `t`,
    /// so the coherence matrix is `t` itself.
    pub fn whitened(t: Matrix) -> Result<Self> {
        let (dx, dy) = t.dim();
        Self::new(Array1::zeros(dx), Array1::zeros(dy), Array2::eye(dx), Array2::eye(dy), t)
    }

    /// Scalar pair with unit variances and correlation `rho`.
    pub fn scalar(rho: f64) -> Result<Self> {
        Self::whitened(Array2::from_elem((1, 1), rho))
    }

    pub fn dx(&self) -> usize {
        self.mean_x.len()
    }

    pub fn dy(&self) -> usize {
        self.mean_y.len()
    }

    pub fn mean_x(&self) -> &Array1<f64> {
        &self.mean_x
    }

    pub fn mean_y(&self) -> &Array1<f64> {
        &self.mean_y
    }

    pub fn cov_x(&self) -> &Matrix {
        &self.cov_x
    }

    pub fn cov_y(&self) -> &Matrix {
        &self.cov_y
    }

    pub fn cross_cov(&self) -> &Matrix {
        &self.cross_cov
    }

    /// `[[Σ_X, Σ_XY], [Σ_XYᵀ, Σ_Y]]`.
    pub fn joint_covariance(&self) -> Matrix {
        let (dx, dy) = (self.dx(), self.dy());
        let mut joint = Array2::<f64>::zeros((dx + dy, dx + dy));
        joint.slice_mut(ndarray::s![..dx, ..dx]).assign(&self.cov_x);
        joint.slice_mut(ndarray::s![dx.., dx..]).assign(&self.cov_y);
        joint.slice_mut(ndarray::s![..dx, dx..]).assign(&self.cross_cov);
        joint.slice_mut(ndarray::s![dx.., ..dx]).assign(&self.cross_cov.t());
        joint
    }

    /// The model of `(M X, N Y)`.
    pub fn transform(&self, m: &Matrix, n: &Matrix) -> Result<Self> {
        if m.ncols() != self.dx() || n.ncols() != self.dy() {
            return Err(Error::DimensionMismatch("transform does not match model dimensions".into()));
        }
        let sym = |s: Matrix| (&s + &s.t()) * 0.5;
        Self::new(
            m.dot(&self.mean_x),
            n.dot(&self.mean_y),
            sym(m.dot(&self.cov_x).dot(&m.t())),
            sym(n.dot(&self.cov_y).dot(&n.t())),
            m.dot(&self.cross_cov).dot(&n.t()),
        )
    }
}

/// Sample means and `1/(n-1)`-normalized covariance blocks.
pub fn fit_gaussian(data: &PairedDataset) -> Result<GaussianJointModel> {
    let n = data.n();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, need: 2 });
    }
    if n <= data.dx().max(data.dy()) {
        log::warn!(
            "fitting a Gaussian with n={n} samples in dimensions ({}, {}); covariances will be singular",
            data.dx(),
            data.dy()
        );
    }
    let mean_x = data.x().mean_axis(Axis(0)).expect("n >= 2");
    let mean_y = data.y().mean_axis(Axis(0)).expect("n >= 2");
    let cx = data.x() - &mean_x;
    let cy = data.y() - &mean_y;
    let denom = (n - 1) as f64;
    let sym = |s: Matrix| (&s + &s.t()) * 0.5;
    let cov_x = sym(cx.t().dot(&cx) / denom);
    let cov_y = sym(cy.t().dot(&cy) / denom);
    let cross_cov = cx.t().dot(&cy) / denom;
    GaussianJointModel::new(mean_x, mean_y, cov_x, cov_y, cross_cov)
}

/// `T = Σ_X^{-1/2} Σ_XY Σ_Y^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    pub t: Matrix,
    inv_sqrt_x: Matrix,
    inv_sqrt_y: Matrix,
}

/// Coherence matrix of `model`, whitening `Σ + ridge·I` on each side.
pub fn coherence(model: &GaussianJointModel, ridge: f64) -> Result<CoherenceMatrix> {
    let inv_sqrt_x = spd_inv_sqrt(model.cov_x(), ridge)?;
    let inv_sqrt_y = spd_inv_sqrt(model.cov_y(), ridge)?;
    let t = inv_sqrt_x.dot(model.cross_cov()).dot(&inv_sqrt_y);
    Ok(CoherenceMatrix { t, inv_sqrt_x, inv_sqrt_y })
}

/// k-dimensional CCA: `a = Σ_X^{-1/2} U_k`, `b = Σ_Y^{-1/2} V_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaSolution {
    #[serde(with = "nested::matrix")]
    pub a: Matrix,
    #[serde(with = "nested::matrix")]
    pub b: Matrix,
    /// Descending, in `[0, 1]`.
    #[serde(with = "nested::vector")]
    pub canonical_correlations: Array1<f64>,
}

impl CcaSolution {
    /// Ky Fan k-norm of the coherence matrix, the optimal CCA objective.
    pub fn objective(&self) -> f64 {
        self.canonical_correlations.sum()
    }

    /// Orthonormal bases of the CCA column spans. Mutual information is
    /// invariant to invertible maps inside the span, so these are optimal
    /// Stiefel slices for a Gaussian model.
    pub fn stiefel_slices(&self) -> Result<(StiefelMatrix, StiefelMatrix)> {
        Ok((stiefel_project(&self.a)?, stiefel_project(&self.b)?))
    }
}

pub fn cca_k(model: &GaussianJointModel, k: usize) -> Result<CcaSolution> {
    cca_k_ridged(model, k, 0.0)
}

pub fn cca_k_ridged(model: &GaussianJointModel, k: usize, ridge: f64) -> Result<CcaSolution> {
    check_k(model, k)?;
    let coh = coherence(model, ridge)?;
    let top = svd_top_k(&coh.t, k)?;
    let mut a = coh.inv_sqrt_x.dot(top.left.as_matrix());
    let mut b = coh.inv_sqrt_y.dot(top.right.as_matrix());
    for j in 0..k {
        let col = a.column(j);
        let pivot = col
            .iter()
            .copied()
            .max_by(|p, q| p.abs().total_cmp(&q.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            a.column_mut(j).mapv_inplace(|v| -v);
            b.column_mut(j).mapv_inplace(|v| -v);
        }
    }
    Ok(CcaSolution { a, b, canonical_correlations: top.values.mapv(|s| s.min(1.0)) })
}

fn check_k(model: &GaussianJointModel, k: usize) -> Result<()> {
    if k == 0 || k > model.dx().min(model.dy()) {
        return Err(Error::DimensionMismatch(format!(
            "slice dimension k={k} must satisfy 1 <= k <= min({}, {})",
            model.dx(),
            model.dy()
        )));
    }
    Ok(())
}

/// Closed-form Gaussian mSMI and its optimal slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMsmi {
    pub value_nats: f64,
    pub slices: CcaSolution,
    /// Set when some canonical correlation had to be clipped at
    /// [`CORRELATION_CLIP`].
    pub degenerate_correlation: bool,
}

fn info_from_correlations(sigmas: impl Iterator<Item = f64>) -> (f64, bool) {
    let mut clipped = false;
    let value = sigmas
        .map(|s| {
            let c = if s > CORRELATION_CLIP {
                clipped = true;
                CORRELATION_CLIP
            } else {
                s
            };
            -0.5 * (1.0 - c * c).ln()
        })
        .sum();
    (value, clipped)
}

pub fn gaussian_msmi(model: &GaussianJointModel, k: usize) -> Result<GaussianMsmi> {
    gaussian_msmi_ridged(model, k, 0.0)
}

pub fn gaussian_msmi_ridged(model: &GaussianJointModel, k: usize, ridge: f64) -> Result<GaussianMsmi> {
    let slices = cca_k_ridged(model, k, ridge)?;
    let (value_nats, degenerate_correlation) =
        info_from_correlations(slices.canonical_correlations.iter().copied());
    Ok(GaussianMsmi { value_nats, slices, degenerate_correlation })
}

pub fn gaussian_mi(model: &GaussianJointModel) -> Result<f64> {
    gaussian_mi_ridged(model, 0.0)
}

/// `I(X; Y) = -1/2 log det(I - TᵀT)`, evaluated through a Cholesky factor of
/// `I - TᵀT` rather than through the singular values.
pub fn gaussian_mi_ridged(model: &GaussianJointModel, ridge: f64) -> Result<f64> {
    let coh = coherence(model, ridge)?;
    let dy = model.dy();
    let gram = coh.t.t().dot(&coh.t);
    let m = Array2::<f64>::eye(dy) - (&gram + &gram.t()) * 0.5;
    let l = cholesky(&m)?;
    Ok(-l.diag().iter().map(|v| v.ln()).sum::<f64>())
}

/// Max-sliced entropy of `N(m, cov)` and the maximizing (top principal) slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSlicedEntropy {
    pub value_nats: f64,
    pub slice: StiefelMatrix,
}

/// `1/2 Σ_{i≤k} log(2πe λ_i(Σ))` over the top-k eigenvalues.
pub fn max_sliced_entropy_gaussian(cov: &SpdMatrix, k: usize) -> Result<MaxSlicedEntropy> {
    let d = cov.dim();
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!("k={k} must satisfy 1 <= k <= d={d}")));
    }
    let eig = sym_eigen(cov.as_matrix())?;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    let value_nats = eig.values.iter().take(k).map(|l| 0.5 * (two_pi_e * l).ln()).sum();
    let mut slice = eig.vectors.slice(ndarray::s![.., ..k]).to_owned();
    for mut col in slice.columns_mut() {
        let pivot = col.iter().copied().max_by(|p, q| p.abs().total_cmp(&q.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok(MaxSlicedEntropy { value_nats, slice: StiefelMatrix::new(slice)? })
}

/// Differential entropy of `N(m, cov)`: `1/2 log((2πe)^d det Σ)`.
pub fn gaussian_entropy(cov: &SpdMatrix) -> Result<f64> {
    let l = cholesky(cov.as_matrix())?;
    let d = cov.dim() as f64;
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(0.5 * d * two_pi_e.ln() + l.diag().iter().map(|v| v.ln()).sum::<f64>())
}

/// The largest max-sliced entropy over distributions supported in a ball of
/// radius `r`: the entropy of the uniform law on a `k`-ball,
/// `log((π r²)^{k/2} / Γ(k/2 + 1))`.
pub fn msh_uniform_ball(radius: f64, k: usize) -> Result<f64> {
    if !(radius > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("need radius > 0 and k >= 1, got r={radius}, k={k}")));
    }
    let half_k = k as f64 / 2.0;
    Ok(half_k * (std::f64::consts::PI * radius * radius).ln() - ln_gamma(half_k + 1.0))
}

/// Checks `aᵀ Σ a = I` to `tol`; used by tests and reports.
pub fn unit_variance_residual(a: &Matrix, cov: &Matrix) -> f64 {
    let g = a.t().dot(cov).dot(a);
    max_abs_diff(&g.view(), &Array2::<f64>::eye(g.nrows()).view())
}
