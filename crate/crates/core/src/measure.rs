//! Gaussian measurement operators (linear and magnitude-only sensing) and
//! an empirical restricted-eigenvalue checker: does a given operator act
//! as a near-isometry on vectors produced by the decoder?

use crate::decoder::{forward, DecoderSpec, DecoderWeights, LatentCode};
use crate::error::{Error, Result};
use crate::numeric::{ensure_finite, l2_norm_sq, DenseMatrix};
use crate::rng::SeededRng;

/// Draws with L2 norm below this are treated as degenerate and skipped by
/// the checker; a ratio against ~0 is noise, not evidence.
pub const DEGENERATE_NORM: f64 = 1e-9;

/// Stream-id base reserved for the checker's per-trial weight draws, so
/// trial k of a run is reproducible in isolation as (seed, BASE + k).
const REC_TRIAL_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone)]
pub struct MeasurementOperator {
    a: DenseMatrix, // n x d
}

impl MeasurementOperator {
    /// n x d matrix of i.i.d. N(0, 1/n) entries: row count sets the scale
    /// so the operator is an isometry in expectation.
    pub fn gaussian(n: usize, d: usize, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "operator needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        let std = (1.0 / n as f64).sqrt();
        Ok(MeasurementOperator { a: rng.gaussian_matrix(n, d, std) })
    }

    /// Wraps an explicit matrix. Test constructor.
    pub fn from_matrix(a: DenseMatrix) -> Result<Self> {
        ensure_finite(a.data(), "measurement matrix")?;
        if a.rows() == 0 || a.cols() == 0 {
            return Err(Error::InvalidArgument("operator must be non-empty".into()));
        }
        Ok(MeasurementOperator { a })
    }

    /// [I 0]: keeps the first n coordinates. Test constructor.
    pub fn identity_block(n: usize, d: usize) -> Result<Self> {
        if n > d {
            return Err(Error::InvalidArgument(format!(
                "identity block needs n <= d, got {n} > {d}"
            )));
        }
        Self::from_matrix(DenseMatrix::from_fn(n, d, |r, c| if r == c { 1.0 } else { 0.0 }))
    }

    /// n <= d rows orthonormalized from a Gaussian draw (modified
    /// Gram-Schmidt, one re-orthogonalization pass). ||Ax|| = ||x|| holds
    /// exactly in the n = d case. Test constructor.
    pub fn orthonormal_rows(n: usize, d: usize, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || n > d {
            return Err(Error::InvalidArgument(format!(
                "orthonormal rows need 1 <= n <= d, got n={n}, d={d}"
            )));
        }
        let mut a = rng.gaussian_matrix(n, d, 1.0);
        for i in 0..n {
            for _pass in 0..2 {
                for j in 0..i {
                    let proj = crate::numeric::dot(a.row(i), a.row(j));
                    let row_j = a.row(j).to_vec();
                    for (c, &vj) in row_j.iter().enumerate() {
                        let v = a.get(i, c) - proj * vj;
                        a.set(i, c, v);
                    }
                }
            }
            let norm = crate::numeric::l2_norm(a.row(i));
            if norm < 1e-12 {
                return Err(Error::InvalidArgument(
                    "degenerate draw while orthonormalizing".into(),
                ));
            }
            for c in 0..d {
                let v = a.get(i, c) / norm;
                a.set(i, c, v);
            }
        }
        Ok(MeasurementOperator { a })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d(&self) -> usize {
        self.a.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.a.mat_vec(x)
    }

    /// A^T r, the adjoint of `apply`.
    pub fn apply_adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.a.tr_mat_vec(r)
    }

    /// |A x| elementwise: magnitude-only sensing.
    pub fn apply_magnitude(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(x)?.into_iter().map(f64::abs).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecMode {
    /// h = G(w; z) for random weights.
    Range,
    /// h = G(w1; z) - G(w2; z) for two independent random draws.
    Difference,
}

/// Outcome of one empirical restricted-eigenvalue run.
#[derive(Debug, Clone)]
pub struct RecReport {
    pub n: usize,
    pub alpha: f64,
    pub trials: usize,
    /// Trials that produced a usable (non-degenerate) vector.
    pub kept: usize,
    pub passes: usize,
    pub pass_rate: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub discarded: usize,
}

/// ||A h||^2 / ||h||^2 for one candidate vector.
pub fn rec_ratio(op: &MeasurementOperator, h: &[f64]) -> Result<f64> {
    let denom = l2_norm_sq(h);
    if denom < DEGENERATE_NORM * DEGENERATE_NORM {
        return Err(Error::InvalidArgument(
            "rec_ratio: vector norm is below the degeneracy floor".into(),
        ));
    }
    Ok(l2_norm_sq(&op.apply(h)?) / denom)
}

fn check_rec_args(spec: &DecoderSpec, alpha: f64, trials: usize) -> Result<()> {
    if spec.use_output_sigmoid() {
        return Err(Error::InvalidArgument(
            "rec check needs the output sigmoid off: the squeezed range is no \
             longer a union of subspaces, so the sandwich bound is meaningless"
                .into(),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    Ok(())
}

/// Draws trial `trial`'s candidate vector; None if degenerate.
fn draw_set_vector(
    spec: &DecoderSpec,
    latent: &LatentCode,
    seed: u64,
    trial: u64,
    mode: RecMode,
) -> Result<Option<Vec<f64>>> {
    let mut rng1 = SeededRng::stream(seed, REC_TRIAL_STREAM_BASE + 2 * trial);
    let w1 = DecoderWeights::init(spec, &mut rng1);
    let (x1, _) = forward(spec, &w1, latent)?;
    let h = match mode {
        RecMode::Range => x1.into_data(),
        RecMode::Difference => {
            let mut rng2 = SeededRng::stream(seed, REC_TRIAL_STREAM_BASE + 2 * trial + 1);
            let w2 = DecoderWeights::init(spec, &mut rng2);
            let (x2, _) = forward(spec, &w2, latent)?;
            crate::numeric::sub(x1.data(), x2.data())
        }
    };
    if crate::numeric::l2_norm(&h) < DEGENERATE_NORM {
        Ok(None)
    } else {
        Ok(Some(h))
    }
}

/// Monte-Carlo check of (1-alpha) ||h||^2 <= ||A h||^2 <= (1+alpha) ||h||^2
/// over random decoder draws. Trial k's weights come from stream
/// (seed, BASE + k), so runs are reproducible and trials independent.
pub fn rec_check(
    op: &MeasurementOperator,
    spec: &DecoderSpec,
    latent: &LatentCode,
    alpha: f64,
    trials: usize,
    seed: u64,
    mode: RecMode,
) -> Result<RecReport> {
    check_rec_args(spec, alpha, trials)?;
    let mut kept = 0usize;
    let mut passes = 0usize;
    let mut discarded = 0usize;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    for trial in 0..trials {
        match draw_set_vector(spec, latent, seed, trial as u64, mode)? {
            None => discarded += 1,
            Some(h) => {
                let ratio = rec_ratio(op, &h)?;
                kept += 1;
                min_ratio = min_ratio.min(ratio);
                max_ratio = max_ratio.max(ratio);
                if ratio >= 1.0 - alpha && ratio <= 1.0 + alpha {
                    passes += 1;
                }
            }
        }
    }
    if kept == 0 {
        return Err(Error::InvalidArgument(
            "every trial drew a degenerate vector; nothing to report".into(),
        ));
    }
    Ok(RecReport {
        n: op.n(),
        alpha,
        trials,
        kept,
        passes,
        pass_rate: passes as f64 / kept as f64,
        min_ratio,
        max_ratio,
        discarded,
    })
}

/// Set vectors tested against each operator draw in `rec_check_grid`. A
/// single random direction nearly always lands inside the sandwich once
/// n is past chi-square concentration, so probing the whole set needs a
/// batch; the operator passes only when every direction survives.
pub const REC_DIRECTIONS_PER_TRIAL: usize = 16;
/// Draw slots reserved per trial for replacing degenerate directions.
const REC_DIRECTION_ATTEMPT_CAP: usize = 64;
const REC_OPERATOR_STREAM_BASE: u64 = 1 << 48;

/// Monte-Carlo estimate, over the operator draw, of the probability that
/// a Gaussian A with n rows keeps every sampled set direction inside the
/// (1-alpha, 1+alpha) sandwich. Each trial draws one nested row pool
/// (A_n = first n rows, scaled 1/sqrt(n)) plus a batch of
/// `REC_DIRECTIONS_PER_TRIAL` directions, and the same rows and
/// directions are reused at every grid point, so pass rates move with n
/// rather than with resampling noise. Reports come back in grid order.
pub fn rec_check_grid(
    spec: &DecoderSpec,
    latent: &LatentCode,
    d: usize,
    alpha: f64,
    trials: usize,
    n_grid: &[usize],
    seed: u64,
    mode: RecMode,
) -> Result<Vec<RecReport>> {
    check_rec_args(spec, alpha, trials)?;
    if n_grid.is_empty() {
        return Err(Error::InvalidArgument("n grid must be non-empty".into()));
    }
    if n_grid.iter().any(|&n| n == 0 || n > d) {
        return Err(Error::InvalidArgument(format!(
            "grid entries must be in 1..={d}, got {n_grid:?}"
        )));
    }
    let max_n = *n_grid.iter().max().unwrap();

    struct Acc {
        passes: usize,
        discarded: usize,
        min_ratio: f64,
        max_ratio: f64,
    }
    let mut accs: Vec<Acc> = n_grid
        .iter()
        .map(|_| Acc {
            passes: 0,
            discarded: 0,
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
        })
        .collect();

    for trial in 0..trials {
        let pool = SeededRng::stream(seed, REC_OPERATOR_STREAM_BASE + trial as u64)
            .gaussian_matrix(max_n, d, 1.0);

        let mut batch: Vec<Vec<f64>> = Vec::with_capacity(REC_DIRECTIONS_PER_TRIAL);
        let mut discarded_here = 0usize;
        let mut attempt = 0usize;
        while batch.len() < REC_DIRECTIONS_PER_TRIAL {
            if attempt == REC_DIRECTION_ATTEMPT_CAP {
                return Err(Error::InvalidArgument(format!(
                    "trial {trial}: {discarded_here} degenerate draws in {attempt} attempts; \
                     the spec's range keeps collapsing to zero"
                )));
            }
            let index = (trial * REC_DIRECTION_ATTEMPT_CAP + attempt) as u64;
            match draw_set_vector(spec, latent, seed, index, mode)? {
                None => discarded_here += 1,
                Some(h) => {
                    if h.len() != d {
                        return Err(Error::Shape(format!(
                            "decoder produces {}-dimensional vectors, grid expects {d}",
                            h.len()
                        )));
                    }
                    batch.push(h);
                }
            }
            attempt += 1;
        }

        let mut all_pass = vec![true; n_grid.len()];
        for h in &batch {
            let h_sq = l2_norm_sq(h);
            // Running sum of (g_i . h)^2 gives every nested ||A_n h||^2 at once.
            let mut prefix = Vec::with_capacity(max_n);
            let mut sum = 0.0;
            for i in 0..max_n {
                let dp = crate::numeric::dot(pool.row(i), h);
                sum += dp * dp;
                prefix.push(sum);
            }
            for (k, &n) in n_grid.iter().enumerate() {
                let ratio = prefix[n - 1] / n as f64 / h_sq;
                accs[k].min_ratio = accs[k].min_ratio.min(ratio);
                accs[k].max_ratio = accs[k].max_ratio.max(ratio);
                if !(ratio >= 1.0 - alpha && ratio <= 1.0 + alpha) {
                    all_pass[k] = false;
                }
            }
        }
        for (acc, &ok) in accs.iter_mut().zip(&all_pass) {
            acc.discarded += discarded_here;
            if ok {
                acc.passes += 1;
            }
        }
    }

    let reports: Vec<RecReport> = accs
        .into_iter()
        .zip(n_grid)
        .map(|(acc, &n)| RecReport {
            n,
            alpha,
            trials,
            kept: trials,
            passes: acc.passes,
            pass_rate: acc.passes as f64 / trials as f64,
            min_ratio: acc.min_ratio,
            max_ratio: acc.max_ratio,
            discarded: acc.discarded,
        })
        .collect();
    Ok(reports)
}
