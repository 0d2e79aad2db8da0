//! Independent reference implementations used to cross-check the fast
//! paths: numerical differentiation for gradients and diagnostics
//! computed directly from their definitions. Nothing here shares code
//! with the implementations it checks.

use crate::decoder::{DecoderSpec, DecoderWeights};
use crate::error::{Error, Result};
use crate::measure::MeasurementOperator;
use crate::numeric::{l2_norm, DenseMatrix};
use crate::solvers::sign_pm;

/// Outcome of an analytic-vs-numerical gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max_i |analytic_i - numeric_i| / max(||analytic||_inf, 1e-12).
    pub max_rel_error: f64,
    /// Flat coordinate where the worst disagreement occurs.
    pub worst_index: usize,
    pub grad_inf_norm: f64,
    /// Step used for the finite differences.
    pub h: f64,
}

/// Central finite differences of an arbitrary scalar loss over the
/// decoder weights, one coordinate at a time. Costs two loss evaluations
/// per parameter; meant for small test networks only.
pub fn finite_diff_grad<F>(
    spec: &DecoderSpec,
    at: &DecoderWeights,
    h: f64,
    mut loss: F,
) -> Result<Vec<DenseMatrix>>
where
    F: FnMut(&DecoderWeights) -> Result<f64>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let flat = at.to_flat();
    let mut grad_flat = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + h;
        let up = loss(&DecoderWeights::from_flat(spec, &probe)?)?;
        probe[i] = flat[i] - h;
        let down = loss(&DecoderWeights::from_flat(spec, &probe)?)?;
        probe[i] = flat[i];
        grad_flat[i] = (up - down) / (2.0 * h);
    }
    Ok(DecoderWeights::from_flat(spec, &grad_flat)?.matrices().to_vec())
}

/// Compares two per-layer gradient stacks coordinate by coordinate.
pub fn compare_grads(
    analytic: &[DenseMatrix],
    numeric: &[DenseMatrix],
    h: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::Shape(format!(
            "comparing {} gradient matrices against {}",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut flat_index = 0usize;
    let mut worst_index = 0usize;
    let mut max_abs_diff = 0.0f64;
    let mut inf_norm = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        if a.shape() != n.shape() {
            return Err(Error::Shape(format!(
                "gradient shapes differ: {:?} vs {:?}",
                a.shape(),
                n.shape()
            )));
        }
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let diff = (av - nv).abs();
            if diff > max_abs_diff {
                max_abs_diff = diff;
                worst_index = flat_index;
            }
            inf_norm = inf_norm.max(av.abs());
            flat_index += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_abs_diff / inf_norm.max(1e-12),
        worst_index,
        grad_inf_norm: inf_norm,
        h,
    })
}

/// ||A^T (Ax* . (1 - sign(Ax*) . sign(Ax_t)))||, straight from the
/// definition: the pull of the measurements whose phase estimate is
/// wrong at the iterate x_t.
pub fn phase_error_norm(op: &MeasurementOperator, xstar: &[f64], xt: &[f64]) -> Result<f64> {
    let ax_star = op.apply(xstar)?;
    let ax_t = op.apply(xt)?;
    let masked: Vec<f64> = ax_star
        .iter()
        .zip(&ax_t)
        .map(|(&s, &c)| s * (1.0 - sign_pm(s) * sign_pm(c)))
        .collect();
    Ok(l2_norm(&op.apply_adjoint(&masked)?))
}

/// ||x0 - xT|| / ||xT||: how far the starting point sat from where the
/// solver ended up, in units of the final iterate.
pub fn delta_i_stat(x0: &[f64], xt: &[f64]) -> Result<f64> {
    if x0.len() != xt.len() {
        return Err(Error::Shape(format!(
            "start of length {} against end of length {}",
            x0.len(),
            xt.len()
        )));
    }
    let denom = l2_norm(xt);
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "distance statistic is undefined for an all-zero final iterate".into(),
        ));
    }
    let diff: f64 = x0.iter().zip(xt).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / denom)
}
