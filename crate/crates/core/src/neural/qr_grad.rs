//! Reverse-mode derivative of the thin QR map `M ↦ Q`.

use ndarray::Array2;

use crate::error::Result;
use crate::linalg::{right_solve_upper_transpose, stiefel_project, Matrix};

/// Central-difference step used by [`qr_backward_numeric`].
pub const FD_STEP: f64 = 1e-5;

/// Given `M = QR` (nonnegative diagonal of `R`) and `Q̄ = ∂L/∂Q`, returns
/// `∂L/∂M = (Q̄ + Q·copyltu(W)) R⁻ᵀ` with `W = -Q̄ᵀQ`, where `copyltu` mirrors the
/// lower triangle into a symmetric matrix.
pub fn qr_backward(q: &Matrix, r: &Matrix, q_bar: &Matrix) -> Matrix {
    let w = -q_bar.t().dot(q);
    let k = w.nrows();
    let sym = Array2::from_shape_fn((k, k), |(i, j)| w[[i.max(j), i.min(j)]]);
    let b = q_bar + &q.dot(&sym);
    right_solve_upper_transpose(&b, r)
}

/// Central finite-difference version of [`qr_backward`], one QR pair per entry.
pub fn qr_backward_numeric(m: &Matrix, q_bar: &Matrix) -> Result<Matrix> {
    let mut out = Array2::zeros(m.dim());
    let mut probe = m.clone();
    for idx in ndarray::indices(m.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let plus = stiefel_project(&probe)?;
        probe[idx] = orig - FD_STEP;
        let minus = stiefel_project(&probe)?;
        probe[idx] = orig;
        let diff = plus.as_matrix() - minus.as_matrix();
        out[idx] = (&diff * q_bar).sum() / (2.0 * FD_STEP);
    }
    Ok(out)
}
