//! Orthonormal 2-D DCT-II synthesis basis, used as the sparsifying
//! dictionary for the l1 baseline solver.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Synthesis matrix D of the orthonormal 2-D DCT-II on a side x side grid,
/// as a (side^2 x side^2) matrix: an image is x = D c for coefficients c.
/// Column u*side + v holds the (u, v) frequency basis image, row-major
/// flattened; D^T D = I.
pub fn dct2_basis(side: usize) -> Result<DenseMatrix> {
    if side == 0 {
        return Err(Error::InvalidArgument("dct2_basis: side must be >= 1".into()));
    }
    let s = side as f64;
    let scale0 = (1.0 / s).sqrt();
    let scale = (2.0 / s).sqrt();
    // 1-D basis: b1[k][t] = alpha_k cos(pi (2t+1) k / (2 side))
    let b1 = DenseMatrix::from_fn(side, side, |k, t| {
        let alpha = if k == 0 { scale0 } else { scale };
        alpha * (std::f64::consts::PI * (2 * t + 1) as f64 * k as f64 / (2.0 * s)).cos()
    });
    let d = side * side;
    let mut m = DenseMatrix::zeros(d, d);
    for u in 0..side {
        for v in 0..side {
            let col = u * side + v;
            for i in 0..side {
                for j in 0..side {
                    m.set(i * side + j, col, b1.get(u, i) * b1.get(v, j));
                }
            }
        }
    }
    Ok(m)
}
