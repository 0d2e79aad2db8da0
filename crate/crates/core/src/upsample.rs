//! Fixed-factor bilinear doubling used between decoder layers.
//!
//! Along one axis with m >= 2 samples: out[2i] = in[i] and
//! out[2i+1] = (in[i] + in[i+1]) / 2, with the last odd sample clamped to
//! in[m-1]. The 2-D operator is the separable application along rows then
//! columns. Axes of length 1 pass through untouched (there is nothing to
//! interpolate), so degenerate 1-D grids stay 1-D.

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Output length of one axis after doubling.
pub fn upsampled_len(m: usize) -> usize {
    if m <= 1 {
        m
    } else {
        2 * m
    }
}

fn up1d(src: &[f64], dst: &mut [f64]) {
    let m = src.len();
    if m <= 1 {
        dst.copy_from_slice(src);
        return;
    }
    for i in 0..m {
        dst[2 * i] = src[i];
        dst[2 * i + 1] = if i + 1 < m {
            0.5 * (src[i] + src[i + 1])
        } else {
            src[m - 1]
        };
    }
}

fn up1d_adjoint(grad: &[f64], m: usize) -> Vec<f64> {
    if m <= 1 {
        return grad.to_vec();
    }
    let mut out = vec![0.0; m];
    for i in 0..m {
        out[i] += grad[2 * i];
    }
    for i in 0..m - 1 {
        let g = 0.5 * grad[2 * i + 1];
        out[i] += g;
        out[i + 1] += g;
    }
    out[m - 1] += grad[2 * m - 1];
    out
}

/// Doubles a single-channel h x w image along both non-degenerate axes.
pub fn bilinear_upsample_2d(img: &DenseMatrix) -> DenseMatrix {
    let (h, w) = img.shape();
    let (hh, ww) = (upsampled_len(h), upsampled_len(w));

    // Rows first: each column is upsampled independently.
    let mut tall = DenseMatrix::zeros(hh, w);
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; hh];
    for c in 0..w {
        for r in 0..h {
            col_in[r] = img.get(r, c);
        }
        up1d(&col_in, &mut col_out);
        for r in 0..hh {
            tall.set(r, c, col_out[r]);
        }
    }

    // Then columns: each row of the tall intermediate.
    let mut out = DenseMatrix::zeros(hh, ww);
    let mut row_out = vec![0.0; ww];
    for r in 0..hh {
        up1d(tall.row(r), &mut row_out);
        out.data_mut()[r * ww..(r + 1) * ww].copy_from_slice(&row_out);
    }
    out
}

/// Adjoint of [`bilinear_upsample_2d`] for an input grid of
/// `in_rows x in_cols`: maps a gradient on the doubled grid back.
pub fn bilinear_upsample_adjoint(
    grad: &DenseMatrix,
    in_rows: usize,
    in_cols: usize,
) -> Result<DenseMatrix> {
    let (hh, ww) = (upsampled_len(in_rows), upsampled_len(in_cols));
    if grad.shape() != (hh, ww) {
        return Err(Error::Shape(format!(
            "upsample adjoint: gradient is {}x{}, expected {}x{} for a {}x{} input",
            grad.rows(),
            grad.cols(),
            hh,
            ww,
            in_rows,
            in_cols
        )));
    }

    // Reverse order of the forward passes: columns first, then rows.
    let mut mid = DenseMatrix::zeros(hh, in_cols);
    for r in 0..hh {
        let back = up1d_adjoint(grad.row(r), in_cols);
        mid.data_mut()[r * in_cols..(r + 1) * in_cols].copy_from_slice(&back);
    }

    let mut out = DenseMatrix::zeros(in_rows, in_cols);
    let mut col_in = vec![0.0; hh];
    for c in 0..in_cols {
        for r in 0..hh {
            col_in[r] = mid.get(r, c);
        }
        let back = up1d_adjoint(&col_in, in_rows);
        for r in 0..in_rows {
            out.set(r, c, back[r]);
        }
    }
    Ok(out)
}

/// The doubling operator as an explicit (out_dim x in_dim) matrix over
/// row-major flattened grids. Test and inspection helper; the hot paths
/// never materialize it.
pub fn materialize_upsample(rows: usize, cols: usize) -> DenseMatrix {
    let in_dim = rows * cols;
    let out_dim = upsampled_len(rows) * upsampled_len(cols);
    let mut m = DenseMatrix::zeros(out_dim, in_dim);
    for k in 0..in_dim {
        let mut basis = DenseMatrix::zeros(rows, cols);
        basis.data_mut()[k] = 1.0;
        let up = bilinear_upsample_2d(&basis);
        for (r, &v) in up.data().iter().enumerate() {
            m.set(r, k, v);
        }
    }
    m
}
