//! Dense linear algebra used throughout the crate.
//!
//! Everything here works on small, dense `f64` matrices (a few hundred rows
//! and columns at most). The decompositions are written out directly so the
//! sign and ordering conventions are under our control:
//!
//! - [`thin_qr`] is Householder QR with the diagonal of `R` forced nonnegative,
//!   which makes `Q` unique for full-column-rank input.
//! - [`sym_eigen`] is cyclic Jacobi, eigenvalues in descending order.
//! - [`svd`] is one-sided (Hestenes) Jacobi, singular values in descending order.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Row-major dense real matrix.
pub type Matrix = Array2<f64>;

/// Tolerance for the orthonormal-columns check on [`StiefelMatrix`].
pub const GRAM_TOL: f64 = 1e-10;
/// Singular value ratio below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// A `d x k` matrix with orthonormal columns (a point on the Stiefel manifold).
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelMatrix(Matrix);

impl Serialize for StiefelMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        nested::matrix::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for StiefelMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = nested::matrix::deserialize(d)?;
        StiefelMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

impl StiefelMatrix {
    /// Wraps `m` after checking `mᵀm = I` to [`GRAM_TOL`].
    pub fn new(m: Matrix) -> Result<Self> {
        if m.ncols() > m.nrows() || m.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Stiefel matrix needs 1 <= cols <= rows, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = gram_residual(&m.view());
        if !(residual < GRAM_TOL) {
            return Err(Error::InvalidArgument(format!(
                "columns are not orthonormal (max |AᵀA - I| = {residual:e})"
            )));
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// Ambient dimension `d`.
    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    /// Slice dimension `k`.
    pub fn slice_dim(&self) -> usize {
        self.0.ncols()
    }
}

impl TryFrom<Matrix> for StiefelMatrix {
    type Error = Error;
    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<StiefelMatrix> for Matrix {
    fn from(s: StiefelMatrix) -> Matrix {
        s.0
    }
}

/// A symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        check_symmetric(&m)?;
        let eig = sym_eigen(&m)?;
        let min = eig.values[eig.values.len() - 1];
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `max |mᵀm - I|` over all entries.
pub fn gram_residual(m: &ArrayView2<f64>) -> f64 {
    let gram = m.t().dot(m);
    let eye = Array2::<f64>::eye(m.ncols());
    max_abs_diff(&gram.view(), &eye.view())
}

pub(crate) fn check_finite(m: &ArrayView2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite entries")))
    }
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(&m.view(), "matrix")?;
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let asym = max_abs_diff(&m.view(), &m.t());
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Thin QR factorization `m = q r` with `q` of shape `d x k` and `r` upper
/// triangular `k x k`.
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder thin QR of a `d x k` matrix (`k <= d`), normalized so that
/// every diagonal entry of `r` is nonnegative.
pub fn thin_qr(m: &Matrix) -> Result<ThinQr> {
    let (d, k) = m.dim();
    if k > d || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "thin QR needs 1 <= cols <= rows, got {d}x{k}"
        )));
    }
    check_finite(&m.view(), "QR input")?;

    let mut a = m.clone();
    let mut reflectors: Vec<Array1<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = a.slice(ndarray::s![j.., j]).to_owned();
        let norm = x.dot(&x).sqrt();
        let mut v = x;
        if norm > 0.0 {
            let alpha = if v[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm = v.dot(&v).sqrt();
            if vnorm > 0.0 {
                v.mapv_inplace(|e| e / vnorm);
            }
        } else {
            v.fill(0.0);
        }
        // a[j.., j..] -= 2 v (vᵀ a[j.., j..])
        let mut block = a.slice_mut(ndarray::s![j.., j..]);
        let proj = v.dot(&block);
        for (mut row, vi) in block.axis_iter_mut(Axis(0)).zip(v.iter()) {
            row.scaled_add(-2.0 * vi, &proj);
        }
        reflectors.push(v);
    }

    let mut r = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            r[[i, j]] = a[[i, j]];
        }
    }

    // Q = H_0 H_1 ... H_{k-1} applied to the first k columns of I.
    let mut q = Array2::<f64>::zeros((d, k));
    for i in 0..k {
        q[[i, i]] = 1.0;
    }
    for j in (0..k).rev() {
        let v = &reflectors[j];
        let mut block = q.slice_mut(ndarray::s![j.., ..]);
        let proj = v.dot(&block);
        for (mut row, vi) in block.axis_iter_mut(Axis(0)).zip(v.iter()) {
            row.scaled_add(-2.0 * vi, &proj);
        }
    }

    for i in 0..k {
        if r[[i, i]] < 0.0 {
            r.row_mut(i).mapv_inplace(|e| -e);
            q.column_mut(i).mapv_inplace(|e| -e);
        }
    }
    Ok(ThinQr { q, r })
}

/// Projects a full-column-rank matrix onto the Stiefel manifold by taking the
/// `Q` factor of its sign-normalized thin QR.
pub fn stiefel_project(m: &Matrix) -> Result<StiefelMatrix> {
    Ok(stiefel_project_with_r(m)?.0)
}

/// Like [`stiefel_project`] but also returns the triangular factor, which the
/// QR backward pass needs.
pub fn stiefel_project_with_r(m: &Matrix) -> Result<(StiefelMatrix, Matrix)> {
    let ThinQr { q, r } = thin_qr(m)?;
    let sv = svd(&r)?.values;
    let largest = sv[0];
    let smallest = sv[sv.len() - 1];
    let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
    if !(ratio > RANK_TOL) {
        return Err(Error::RankDeficient { ratio });
    }
    Ok((StiefelMatrix(q), r))
}

/// Draws a Haar-distributed point on `St(k, d)`.
pub fn haar_stiefel_sample<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<StiefelMatrix> {
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "Haar sample needs 1 <= k <= d, got k={k}, d={d}"
        )));
    }
    loop {
        let g = Array2::from_shape_simple_fn((d, k), || rng.sample::<f64, _>(StandardNormal));
        match stiefel_project(&g) {
            Ok(s) => return Ok(s),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Array1<f64>,
    /// Unit eigenvectors as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    check_symmetric(s)?;
    let n = s.nrows();
    let mut a = s.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let total: f64 = a.iter().map(|e| e * e).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for r in 0..n {
                    let arp = a[[r, p]];
                    let arq = a[[r, q]];
                    a[[r, p]] = c * arp - sn * arq;
                    a[[r, q]] = sn * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[[p, r]];
                    let aqr = a[[q, r]];
                    a[[p, r]] = c * apr - sn * aqr;
                    a[[q, r]] = sn * apr + c * aqr;
                }
                for r in 0..n {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = c * vrp - sn * vrq;
                    v[[r, q]] = sn * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Full singular value decomposition `m = u diag(values) vᵀ` with
/// `u: rows x r`, `v: cols x r`, `r = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub values: Array1<f64>,
    pub u: Matrix,
    pub v: Matrix,
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    check_finite(&m.view(), "SVD input")?;
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch("SVD of an empty matrix".into()));
    }
    if rows < cols {
        let t = svd(&m.t().to_owned())?;
        return Ok(Svd { values: t.values, u: t.v, v: t.u });
    }

    let mut u = m.clone();
    let mut v = Array2::<f64>::eye(cols);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..rows {
                    let up = u[[r, p]];
                    let uq = u[[r, q]];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let up = u[[r, p]];
                    let uq = u[[r, q]];
                    u[[r, p]] = c * up - s * uq;
                    u[[r, q]] = s * up + c * uq;
                }
                for r in 0..cols {
                    let vp = v[[r, p]];
                    let vq = v[[r, q]];
                    v[[r, p]] = c * vp - s * vq;
                    v[[r, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..cols).map(|j| u.column(j).dot(&u.column(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let largest = norms[order[0]];

    let mut values = Array1::<f64>::zeros(cols);
    let mut left = Array2::<f64>::zeros((rows, cols));
    let mut right = Array2::<f64>::zeros((cols, cols));
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        values[dst] = sigma;
        right.column_mut(dst).assign(&v.column(src));
        if sigma > largest * 1e-14 && sigma > 0.0 {
            left.column_mut(dst).assign(&u.column(src).mapv(|e| e / sigma));
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut left, &missing);
    Ok(Svd { values, u: left, v: right })
}

/// Fills the listed columns of `q` with unit vectors orthogonal to all other
/// columns (Gram-Schmidt against the standard basis).
fn complete_orthonormal(q: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = q.nrows();
    let mut filled: Vec<usize> = (0..q.ncols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &col in missing {
        while candidate < rows {
            let mut e = Array1::<f64>::zeros(rows);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let c = q.column(j).dot(&e);
                    e.scaled_add(-c, &q.column(j));
                }
            }
            let norm = e.dot(&e).sqrt();
            if norm > 1e-6 {
                q.column_mut(col).assign(&(e / norm));
                filled.push(col);
                break;
            }
        }
    }
}

/// Top-`k` singular triplets.
#[derive(Debug, Clone)]
pub struct TopSvd {
    pub values: Array1<f64>,
    pub left: StiefelMatrix,
    pub right: StiefelMatrix,
}

/// Leading `k` singular values (descending) with their left and right
/// singular vectors.
pub fn svd_top_k(m: &Matrix, k: usize) -> Result<TopSvd> {
    let (rows, cols) = m.dim();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::DimensionMismatch(format!(
            "svd_top_k needs 1 <= k <= min(rows, cols), got k={k} for {rows}x{cols}"
        )));
    }
    let full = svd(m)?;
    let take = |a: &Matrix| a.slice(ndarray::s![.., ..k]).to_owned();
    Ok(TopSvd {
        values: full.values.slice(ndarray::s![..k]).to_owned(),
        left: StiefelMatrix(take(&full.u)),
        right: StiefelMatrix(take(&full.v)),
    })
}

/// Inverse square root of `s + ridge·I` via eigendecomposition.
pub fn spd_inv_sqrt(s: &Matrix, ridge: f64) -> Result<Matrix> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let mut shifted = s.clone();
    for i in 0..shifted.nrows().min(shifted.ncols()) {
        shifted[[i, i]] += ridge;
    }
    let eig = sym_eigen(&shifted)?;
    let min = eig.values[eig.values.len() - 1];
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let w = &eig.vectors;
    let scaled = w * &eig.values.mapv(|l| 1.0 / l.sqrt());
    Ok(scaled.dot(&w.t()))
}

/// The default ridge for covariance whitening: `1e-6 · trace(s) / dim`.
pub fn default_ridge(s: &Matrix) -> f64 {
    let n = s.nrows().max(1) as f64;
    let tr: f64 = s.diag().sum();
    (1e-6 * tr / n).max(0.0)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    check_symmetric(s)?;
    let n = s.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = s[[j, j]];
        for p in 0..j {
            diag -= l[[j, p]] * l[[j, p]];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: diag });
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut acc = s[[i, j]];
            for p in 0..j {
                acc -= l[[i, p]] * l[[j, p]];
            }
            l[[i, j]] = acc / ljj;
        }
    }
    Ok(l)
}

/// Returns `b r⁻ᵀ` for upper-triangular `r` with nonzero diagonal.
pub(crate) fn right_solve_upper_transpose(b: &Matrix, r: &Matrix) -> Matrix {
    // Row-wise: x rᵀ = b_row  <=>  r xᵀ = b_rowᵀ, solved by back substitution.
    let k = r.nrows();
    let mut x = Array2::<f64>::zeros(b.dim());
    for row in 0..b.nrows() {
        for j in (0..k).rev() {
            let mut acc = b[[row, j]];
            for p in (j + 1)..k {
                acc -= r[[j, p]] * x[[row, p]];
            }
            x[[row, j]] = acc / r[[j, j]];
        }
    }
    x
}

/// Serde adapters that write arrays as nested JSON lists (`[[row], ...]`).
///
/// Use with `#[serde(with = "msmi::linalg::nested::matrix")]`.
pub mod nested {
    pub mod matrix {
        use ndarray::Array2;
        use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
            let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
            rows.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(D::Error::custom("ragged matrix rows"));
            }
            let nrows = rows.len();
            Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
                .map_err(D::Error::custom)
        }
    }

    pub mod option_matrix {
        use ndarray::Array2;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrapped(#[serde(with = "super::matrix")] Array2<f64>);

        pub fn serialize<S: Serializer>(m: &Option<Array2<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.clone().map(Wrapped).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Array2<f64>>, D::Error> {
            Ok(Option::<Wrapped>::deserialize(d)?.map(|w| w.0))
        }
    }

    pub mod vector {
        use ndarray::Array1;
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        pub fn serialize<S: Serializer>(v: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.to_vec().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
            Ok(Array1::from(Vec::<f64>::deserialize(d)?))
        }
    }
}
