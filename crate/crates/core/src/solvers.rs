//! Reconstruction solvers.
//!
//! Two untrained-prior solvers share one outer loop shape: projected
//! gradient descent (`NetPgd`) alternates a gradient step in image space
//! with a projection onto the decoder range, while plain gradient descent
//! (`NetGd`) optimizes the decoder weights against the measurement loss
//! directly. A DCT-basis ISTA solver (`ista_dct`) is the sparsity
//! baseline. All three report their progress through the same
//! `SolverTrace`.

use crate::decoder::{
    forward, grad_from_tape, project, DecoderSpec, DecoderWeights, LatentCode, DIVERGENCE_FACTOR,
};
use crate::dct::dct2_basis;
use crate::error::{Error, Result};
use crate::image::ImageVector;
use crate::measure::MeasurementOperator;
use crate::numeric::{ensure_finite, l2_norm, l2_norm_sq, DenseMatrix};
use crate::rng::SeededRng;

/// Seed for the fallback weight initialization when a caller passes no
/// starting point.
pub const DEFAULT_INIT_SEED: u64 = 0;

/// Power-iteration count used to estimate the ISTA step size.
const POWER_ITERS: usize = 50;

/// Sign with the convention sign(0) = +1, so a phase estimate is always
/// in {-1, +1} and |v| = sign(v) * v holds everywhere.
pub fn sign_pm(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenseMode {
    /// y = A x.
    Linear,
    /// y = |A x|: magnitudes only, phases lost.
    Magnitude,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Outer step size. Ignored by `NetGd`, which only steps in weight
    /// space.
    pub eta: f64,
    pub max_outer_iters: usize,
    /// Relative-residual stopping threshold, ||y - f(x)|| / ||y||.
    pub tol: f64,
    /// Inner iterations: projection steps per outer iteration for
    /// `NetPgd`, weight steps per epoch for `NetGd`.
    pub inner_iters: usize,
    pub inner_lr: f64,
}

impl SolverConfig {
    /// Defaults for linear measurements.
    pub fn cs() -> Self {
        SolverConfig { eta: 0.5, max_outer_iters: 100, tol: 1e-6, inner_iters: 200, inner_lr: 0.01 }
    }

    /// Defaults for magnitude-only measurements: the descent direction
    /// already carries a sign estimate, so a full step is stable.
    pub fn cpr() -> Self {
        SolverConfig { eta: 1.0, ..Self::cs() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("max_outer_iters must be >= 1".into()));
        }
        if !self.tol.is_finite() || self.tol < 0.0 {
            return Err(Error::InvalidArgument(format!("tol must be >= 0, got {}", self.tol)));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidArgument("inner_iters must be >= 1".into()));
        }
        if !self.inner_lr.is_finite() || self.inner_lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "inner_lr must be positive, got {}",
                self.inner_lr
            )));
        }
        Ok(())
    }
}

/// One row of a solver's progress log. `t = 0` is the state before any
/// outer step.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub t: usize,
    /// ||y - f(x_t)||^2 under the solver's sensing mode.
    pub measurement_loss: f64,
    /// Solver-specific auxiliary loss: the projection fit for `NetPgd`,
    /// the L1 penalty for `ista_dct`, absent for `NetGd` and at t = 0.
    pub fit_loss: Option<f64>,
    /// Against the reference signal when one was supplied;
    /// sign-resolved in magnitude mode.
    pub nmse: Option<f64>,
    /// Phase-mismatch norm against the reference, magnitude mode only.
    pub phase_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub records: Vec<IterationRecord>,
    pub final_image: ImageVector,
    /// Decoder weights at the final iterate; None for solvers without one.
    pub final_weights: Option<DecoderWeights>,
    pub outer_iters_used: usize,
    /// Whether the relative residual fell below the stopping threshold.
    pub converged: bool,
}

impl SolverTrace {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map(|r| r.measurement_loss).unwrap_or(f64::NAN)
    }

    pub fn final_nmse(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.nmse)
    }
}

/// ||xhat - xstar||^2 / ||xstar||^2. With `sign_resolve`, the smaller of
/// the errors against xstar and -xstar, for signals recovered up to a
/// global sign.
pub fn nmse(xhat: &[f64], xstar: &[f64], sign_resolve: bool) -> Result<f64> {
    if xhat.len() != xstar.len() {
        return Err(Error::Shape(format!(
            "nmse over vectors of different lengths {} and {}",
            xhat.len(),
            xstar.len()
        )));
    }
    let denom = l2_norm_sq(xstar);
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "nmse is undefined against an all-zero reference".into(),
        ));
    }
    let direct: f64 = xhat.iter().zip(xstar).map(|(a, b)| (a - b) * (a - b)).sum();
    let err = if sign_resolve {
        let flipped: f64 = xhat.iter().zip(xstar).map(|(a, b)| (a + b) * (a + b)).sum();
        direct.min(flipped)
    } else {
        direct
    };
    Ok(err / denom)
}

fn default_weights(spec: &DecoderSpec) -> DecoderWeights {
    DecoderWeights::init(spec, &mut SeededRng::new(DEFAULT_INIT_SEED))
}

/// Shared construction-time checks; returns the starting image and its
/// linear measurement.
struct SolverState {
    w: DecoderWeights,
    x: Vec<f64>,
    ax: Vec<f64>,
    out_shape: (usize, usize),
    ax_star: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn init_state(
    y: &[f64],
    op: &MeasurementOperator,
    spec: &DecoderSpec,
    latent: &LatentCode,
    cfg: &SolverConfig,
    mode: SenseMode,
    w0: Option<&DecoderWeights>,
    reference: Option<&[f64]>,
) -> Result<SolverState> {
    cfg.validate()?;
    if y.len() != op.n() {
        return Err(Error::Shape(format!(
            "{} measurements against an operator with {} rows",
            y.len(),
            op.n()
        )));
    }
    ensure_finite(y, "measurements")?;
    if mode == SenseMode::Magnitude && y.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "magnitude measurements must be nonnegative".into(),
        ));
    }
    if let Some(r) = reference {
        if r.len() != op.d() {
            return Err(Error::Shape(format!(
                "reference of length {} against an operator with {} columns",
                r.len(),
                op.d()
            )));
        }
        ensure_finite(r, "reference signal")?;
        if l2_norm_sq(r) == 0.0 {
            return Err(Error::InvalidArgument(
                "reference signal must be nonzero for error reporting".into(),
            ));
        }
    }

    let w = match w0 {
        Some(w) => w.clone(),
        None => default_weights(spec),
    };
    let (img, _) = forward(spec, &w, latent)?;
    if img.len() != op.d() {
        return Err(Error::Shape(format!(
            "decoder produces {}-dimensional images, operator expects {}",
            img.len(),
            op.d()
        )));
    }
    let out_shape = (img.height(), img.width());
    let x = img.into_data();
    let ax = op.apply(&x)?;
    let ax_star = match (mode, reference) {
        (SenseMode::Magnitude, Some(r)) => Some(op.apply(r)?),
        _ => None,
    };
    Ok(SolverState { w, x, ax, out_shape, ax_star })
}

fn measurement_loss(y: &[f64], ax: &[f64], mode: SenseMode) -> f64 {
    match mode {
        SenseMode::Linear => y.iter().zip(ax).map(|(a, b)| (a - b) * (a - b)).sum(),
        SenseMode::Magnitude => y.iter().zip(ax).map(|(a, b)| (a - b.abs()) * (a - b.abs())).sum(),
    }
}

fn relative_residual(y: &[f64], ax: &[f64], mode: SenseMode) -> f64 {
    let num = measurement_loss(y, ax, mode).sqrt();
    let den = l2_norm(y);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// ||A^T (Ax* . (1 - sign(Ax*) . sign(Ax)))||: the pull exerted by the
/// measurements whose estimated phase disagrees with the truth.
fn phase_error_from_parts(op: &MeasurementOperator, ax_star: &[f64], ax: &[f64]) -> Result<f64> {
    let masked: Vec<f64> = ax_star
        .iter()
        .zip(ax)
        .map(|(&s, &c)| s * (1.0 - sign_pm(s) * sign_pm(c)))
        .collect();
    Ok(l2_norm(&op.apply_adjoint(&masked)?))
}

/// Projected gradient descent over the decoder range. Each outer step
/// moves the iterate down the measurement loss, then projects back onto
/// the set of decodable images, warm-starting from the previous weights.
pub struct NetPgd<'a> {
    y: &'a [f64],
    op: &'a MeasurementOperator,
    spec: &'a DecoderSpec,
    latent: &'a LatentCode,
    cfg: SolverConfig,
    mode: SenseMode,
    reference: Option<&'a [f64]>,
    ax_star: Option<Vec<f64>>,
    w: DecoderWeights,
    x: Vec<f64>,
    ax: Vec<f64>,
    out_shape: (usize, usize),
    t: usize,
    last_target: Option<Vec<f64>>,
    records: Vec<IterationRecord>,
}

impl<'a> NetPgd<'a> {
    pub fn new_cs(
        y: &'a [f64],
        op: &'a MeasurementOperator,
        spec: &'a DecoderSpec,
        latent: &'a LatentCode,
        cfg: SolverConfig,
        w0: Option<&DecoderWeights>,
        reference: Option<&'a [f64]>,
    ) -> Result<Self> {
        Self::new(y, op, spec, latent, cfg, SenseMode::Linear, w0, reference)
    }

    pub fn new_cpr(
        y: &'a [f64],
        op: &'a MeasurementOperator,
        spec: &'a DecoderSpec,
        latent: &'a LatentCode,
        cfg: SolverConfig,
        w0: Option<&DecoderWeights>,
        reference: Option<&'a [f64]>,
    ) -> Result<Self> {
        Self::new(y, op, spec, latent, cfg, SenseMode::Magnitude, w0, reference)
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        y: &'a [f64],
        op: &'a MeasurementOperator,
        spec: &'a DecoderSpec,
        latent: &'a LatentCode,
        cfg: SolverConfig,
        mode: SenseMode,
        w0: Option<&DecoderWeights>,
        reference: Option<&'a [f64]>,
    ) -> Result<Self> {
        let state = init_state(y, op, spec, latent, &cfg, mode, w0, reference)?;
        let mut solver = NetPgd {
            y,
            op,
            spec,
            latent,
            cfg,
            mode,
            reference,
            ax_star: state.ax_star,
            w: state.w,
            x: state.x,
            ax: state.ax,
            out_shape: state.out_shape,
            t: 0,
            last_target: None,
            records: Vec::new(),
        };
        solver.record_state(None)?;
        Ok(solver)
    }

    fn record_state(&mut self, fit: Option<f64>) -> Result<()> {
        let nmse_now = match self.reference {
            Some(r) => Some(nmse(&self.x, r, self.mode == SenseMode::Magnitude)?),
            None => None,
        };
        let phase_error = match &self.ax_star {
            Some(ax_star) => Some(phase_error_from_parts(self.op, ax_star, &self.ax)?),
            None => None,
        };
        self.records.push(IterationRecord {
            t: self.t,
            measurement_loss: measurement_loss(self.y, &self.ax, self.mode),
            fit_loss: fit,
            nmse: nmse_now,
            phase_error,
        });
        Ok(())
    }

    pub fn relative_residual(&self) -> f64 {
        relative_residual(self.y, &self.ax, self.mode)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn weights(&self) -> &DecoderWeights {
        &self.w
    }

    /// The pre-projection iterate v_t of the most recent step.
    pub fn last_projection_target(&self) -> Option<&[f64]> {
        self.last_target.as_deref()
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    /// One outer iteration: gradient step in image space, projection back
    /// onto the decoder range, bookkeeping.
    pub fn step(&mut self) -> Result<&IterationRecord> {
        // Residual whose adjoint is the descent direction: in magnitude
        // mode the measured magnitudes are lifted onto the current phase
        // estimate first.
        let residual: Vec<f64> = match self.mode {
            SenseMode::Linear => self.ax.iter().zip(self.y).map(|(&a, &y)| a - y).collect(),
            SenseMode::Magnitude => {
                self.ax.iter().zip(self.y).map(|(&a, &y)| a - y * sign_pm(a)).collect()
            }
        };
        let grad = self.op.apply_adjoint(&residual)?;
        let v: Vec<f64> =
            self.x.iter().zip(&grad).map(|(&xv, &gv)| xv - self.cfg.eta * gv).collect();
        ensure_finite(&v, "pre-projection iterate")?;

        let (w_new, fit) =
            project(self.spec, self.latent, &v, &self.w, self.cfg.inner_iters, self.cfg.inner_lr)?;
        let (img, _) = forward(self.spec, &w_new, self.latent)?;
        self.w = w_new;
        self.x = img.into_data();
        self.ax = self.op.apply(&self.x)?;
        self.last_target = Some(v);
        self.t += 1;
        self.record_state(Some(fit))?;
        Ok(self.records.last().expect("just pushed"))
    }

    /// Runs until the relative residual drops below `tol` or the
    /// iteration budget is spent.
    pub fn run(mut self) -> Result<SolverTrace> {
        while self.t < self.cfg.max_outer_iters && self.relative_residual() >= self.cfg.tol {
            self.step()?;
        }
        let converged = self.relative_residual() < self.cfg.tol;
        Ok(SolverTrace {
            records: self.records,
            final_image: ImageVector::new(self.out_shape.0, self.out_shape.1, self.x)?,
            final_weights: Some(self.w),
            outer_iters_used: self.t,
            converged,
        })
    }
}

/// Linear-measurement recovery by projected gradient descent.
#[allow(clippy::too_many_arguments)]
pub fn net_pgd_cs(
    y: &[f64],
    op: &MeasurementOperator,
    spec: &DecoderSpec,
    latent: &LatentCode,
    cfg: SolverConfig,
    w0: Option<&DecoderWeights>,
    reference: Option<&[f64]>,
) -> Result<SolverTrace> {
    NetPgd::new_cs(y, op, spec, latent, cfg, w0, reference)?.run()
}

/// Magnitude-only recovery by projected gradient descent with per-step
/// phase estimation.
#[allow(clippy::too_many_arguments)]
pub fn net_pgd_cpr(
    y: &[f64],
    op: &MeasurementOperator,
    spec: &DecoderSpec,
    latent: &LatentCode,
    cfg: SolverConfig,
    w0: Option<&DecoderWeights>,
    reference: Option<&[f64]>,
) -> Result<SolverTrace> {
    NetPgd::new_cpr(y, op, spec, latent, cfg, w0, reference)?.run()
}

/// Gradient descent directly on the decoder weights against the
/// measurement loss. One "outer iteration" is an epoch of
/// `cfg.inner_iters` momentum steps at `cfg.inner_lr`; records are kept
/// per epoch.
#[allow(clippy::too_many_arguments)]
pub fn net_gd(
    y: &[f64],
    op: &MeasurementOperator,
    spec: &DecoderSpec,
    latent: &LatentCode,
    cfg: SolverConfig,
    mode: SenseMode,
    w0: Option<&DecoderWeights>,
    reference: Option<&[f64]>,
) -> Result<SolverTrace> {
    let state = init_state(y, op, spec, latent, &cfg, mode, w0, reference)?;
    let mut w = state.w;
    let mut x = state.x;
    let mut ax = state.ax;
    let ax_star = state.ax_star;
    // The tape from the most recent forward pass, reused for the next
    // backward pass.
    let (_, mut tape) = forward(spec, &w, latent)?;

    let mut records = Vec::new();
    let mut push_record = |t: usize, x: &[f64], ax: &[f64]| -> Result<f64> {
        let loss = measurement_loss(y, ax, mode);
        let nmse_now = match reference {
            Some(r) => Some(nmse(x, r, mode == SenseMode::Magnitude)?),
            None => None,
        };
        let phase_error = match &ax_star {
            Some(s) => Some(phase_error_from_parts(op, s, ax)?),
            None => None,
        };
        records.push(IterationRecord { t, measurement_loss: loss, fit_loss: None, nmse: nmse_now, phase_error });
        Ok(loss)
    };

    let initial_loss = push_record(0, &x, &ax)?;
    let limit = DIVERGENCE_FACTOR * initial_loss;

    let mut velocity: Vec<DenseMatrix> =
        w.matrices().iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect();

    let mut epoch = 0;
    while epoch < cfg.max_outer_iters && relative_residual(y, &ax, mode) >= cfg.tol {
        for _ in 0..cfg.inner_iters {
            let upstream: Vec<f64> = {
                let residual: Vec<f64> = match mode {
                    SenseMode::Linear => ax.iter().zip(y).map(|(&a, &yv)| a - yv).collect(),
                    SenseMode::Magnitude => {
                        ax.iter().zip(y).map(|(&a, &yv)| a - yv * sign_pm(a)).collect()
                    }
                };
                op.apply_adjoint(&residual)?.into_iter().map(|g| 2.0 * g).collect()
            };
            let grads = grad_from_tape(&w, &tape, &upstream)?;
            for ((v, g), m) in velocity.iter_mut().zip(&grads).zip(w.matrices_mut()) {
                v.scale(crate::decoder::PROJECT_MOMENTUM);
                v.add_scaled(g, 1.0)?;
                m.add_scaled(v, -cfg.inner_lr)?;
            }
            let (img, new_tape) = forward(spec, &w, latent)?;
            tape = new_tape;
            x = img.into_data();
            ax = op.apply(&x)?;
        }
        epoch += 1;
        let loss = push_record(epoch, &x, &ax)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("measurement loss after epoch {epoch}")));
        }
        if initial_loss > 0.0 && loss > limit {
            return Err(Error::Diverged { iter: epoch, loss, limit });
        }
    }

    let converged = relative_residual(y, &ax, mode) < cfg.tol;
    Ok(SolverTrace {
        records,
        final_image: ImageVector::new(state.out_shape.0, state.out_shape.1, x)?,
        final_weights: Some(w),
        outer_iters_used: epoch,
        converged,
    })
}

fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// L1-regularized recovery in a 2-D DCT basis by iterative
/// soft-thresholding: minimizes ||y - A D c||^2 + lambda ||c||_1 and
/// returns D c. The step size is 1 over the largest squared singular
/// value of A D, estimated by power iteration, which makes the objective
/// non-increasing.
pub fn ista_dct(
    y: &[f64],
    op: &MeasurementOperator,
    lambda: f64,
    iters: usize,
) -> Result<SolverTrace> {
    if y.len() != op.n() {
        return Err(Error::Shape(format!(
            "{} measurements against an operator with {} rows",
            y.len(),
            op.n()
        )));
    }
    ensure_finite(y, "measurements")?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    let d = op.d();
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(Error::InvalidArgument(format!(
            "DCT basis needs a square image, got dimension {d}"
        )));
    }

    let basis = dct2_basis(side)?;
    let m = op.matrix().mat_mul(&basis)?;

    // Largest eigenvalue of M^T M by power iteration from a flat start.
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    for _ in 0..POWER_ITERS {
        let mv = m.mat_vec(&v)?;
        let mut next = m.tr_mat_vec(&mv)?;
        let norm = l2_norm(&next);
        if norm == 0.0 {
            break;
        }
        for e in &mut next {
            *e /= norm;
        }
        v = next;
    }
    let top_eig = l2_norm_sq(&m.mat_vec(&v)?);
    if top_eig <= 0.0 || !top_eig.is_finite() {
        return Err(Error::NonFinite("step-size estimate for the DCT solver".into()));
    }
    let step = 1.0 / top_eig;

    let mut c = vec![0.0; d];
    let mut mc = vec![0.0; y.len()];
    let mut records = Vec::with_capacity(iters + 1);
    let penalty = |c: &[f64]| lambda * c.iter().map(|v| v.abs()).sum::<f64>();
    records.push(IterationRecord {
        t: 0,
        measurement_loss: l2_norm_sq(y),
        fit_loss: Some(0.0),
        nmse: None,
        phase_error: None,
    });

    for t in 1..=iters {
        let residual: Vec<f64> = mc.iter().zip(y).map(|(&a, &b)| a - b).collect();
        let grad = m.tr_mat_vec(&residual)?;
        for (ci, gi) in c.iter_mut().zip(&grad) {
            *ci = soft_threshold(*ci - step * gi, step * lambda / 2.0);
        }
        mc = m.mat_vec(&c)?;
        let loss: f64 = mc.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("DCT solver loss at iteration {t}")));
        }
        records.push(IterationRecord {
            t,
            measurement_loss: loss,
            fit_loss: Some(penalty(&c)),
            nmse: None,
            phase_error: None,
        });
    }

    let xhat = basis.mat_vec(&c)?;
    Ok(SolverTrace {
        records,
        final_image: ImageVector::new(side, side, xhat)?,
        final_weights: None,
        outer_iters_used: iters,
        converged: false,
    })
}
