//! Untrained decoder network: a fixed random latent code pushed through
//! L fully-connected 1x1 channel maps with ReLU, optional per-channel
//! standardization, and fixed bilinear doubling between layers. The only
//! trainable state is the per-layer channel-mixing matrices; the latent
//! code is drawn once and never optimized.
//!
//! With channel list [k_1, ..., k_L, k_out] and latent grid side s, layer
//! l < L computes Z_{l+1} = upsample(norm(relu(Z_l W_l))) and the output
//! is x = vec(Z_L W_L), optionally through a sigmoid. The output side is
//! s * 2^(L-1) and the model has sum k_l * k_{l+1} parameters, kept
//! strictly below the output dimension.

use crate::error::{Error, Result};
use crate::image::ImageVector;
use crate::numeric::{l2_norm_sq, DenseMatrix};
use crate::rng::SeededRng;
use crate::upsample::{bilinear_upsample_2d, bilinear_upsample_adjoint, upsampled_len};

/// Variance floor inside per-channel standardization.
pub const NORM_EPS: f64 = 1e-6;

/// Momentum coefficient for the projection's inner gradient descent.
pub const PROJECT_MOMENTUM: f64 = 0.9;

/// Loss blowup factor (relative to the starting loss) that makes the
/// projection report divergence instead of returning garbage.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderSpec {
    layer_channels: Vec<usize>, // [k_1, ..., k_L, k_out]
    latent_side: usize,
    use_channel_norm: bool,
    use_output_sigmoid: bool,
}

impl DecoderSpec {
    pub fn new(
        layer_channels: Vec<usize>,
        latent_side: usize,
        use_channel_norm: bool,
        use_output_sigmoid: bool,
    ) -> Result<Self> {
        if layer_channels.len() < 3 {
            return Err(Error::Spec(format!(
                "need at least two mixing layers plus an output width, got channel list {layer_channels:?}"
            )));
        }
        if layer_channels.iter().any(|&k| k == 0) {
            return Err(Error::Spec("channel widths must be >= 1".into()));
        }
        if latent_side == 0 {
            return Err(Error::Spec("latent_side must be >= 1".into()));
        }
        let spec = DecoderSpec {
            layer_channels,
            latent_side,
            use_channel_norm,
            use_output_sigmoid,
        };
        let (params, dim) = (spec.param_count(), spec.output_dim());
        if params >= dim {
            return Err(Error::Spec(format!(
                "{params} weights would meet or exceed the {dim}-dimensional output; \
                 the prior only regularizes while under-parameterized"
            )));
        }
        Ok(spec)
    }

    /// Number of weight matrices L.
    pub fn num_layers(&self) -> usize {
        self.layer_channels.len() - 1
    }

    pub fn layer_channels(&self) -> &[usize] {
        &self.layer_channels
    }

    pub fn latent_side(&self) -> usize {
        self.latent_side
    }

    pub fn latent_channels(&self) -> usize {
        self.layer_channels[0]
    }

    pub fn output_channels(&self) -> usize {
        *self.layer_channels.last().unwrap()
    }

    pub fn use_channel_norm(&self) -> bool {
        self.use_channel_norm
    }

    pub fn use_output_sigmoid(&self) -> bool {
        self.use_output_sigmoid
    }

    /// Side of the square output grid: latent_side * 2^(L-1).
    pub fn output_side(&self) -> usize {
        self.latent_side << (self.num_layers() - 1)
    }

    pub fn output_dim(&self) -> usize {
        let s = self.output_side();
        s * s
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_channels.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weight_shapes().iter().map(|(a, b)| a * b).sum()
    }

    /// Canonical key=value form, the one the CLI reads and writes.
    pub fn to_config_string(&self) -> String {
        let channels: Vec<String> = self.layer_channels.iter().map(|k| k.to_string()).collect();
        format!(
            "layers={}\nchannels={}\nlatent_side={}\nchannel_norm={}\nsigmoid={}\n",
            self.num_layers(),
            channels.join(","),
            self.latent_side,
            self.use_channel_norm,
            self.use_output_sigmoid,
        )
    }

    /// Parses the key=value form; all five keys are required and `layers`
    /// must agree with the channel list.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut layers = None;
        let mut channels: Option<Vec<usize>> = None;
        let mut latent_side = None;
        let mut channel_norm = None;
        let mut sigmoid = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Spec(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Spec(format!("line {}: bad {what}: {value:?}", lineno + 1));
            match key {
                "layers" => layers = Some(value.parse::<usize>().map_err(|_| bad("layers"))?),
                "channels" => {
                    let parsed: std::result::Result<Vec<usize>, _> =
                        value.split(',').map(|t| t.trim().parse::<usize>()).collect();
                    channels = Some(parsed.map_err(|_| bad("channels"))?);
                }
                "latent_side" => {
                    latent_side = Some(value.parse::<usize>().map_err(|_| bad("latent_side"))?)
                }
                "channel_norm" => channel_norm = Some(parse_bool(value).ok_or_else(|| bad("channel_norm"))?),
                "sigmoid" => sigmoid = Some(parse_bool(value).ok_or_else(|| bad("sigmoid"))?),
                other => {
                    return Err(Error::Spec(format!("line {}: unknown key {other:?}", lineno + 1)))
                }
            }
        }
        let layers = layers.ok_or_else(|| Error::Spec("missing key: layers".into()))?;
        let channels = channels.ok_or_else(|| Error::Spec("missing key: channels".into()))?;
        let latent_side = latent_side.ok_or_else(|| Error::Spec("missing key: latent_side".into()))?;
        let channel_norm = channel_norm.ok_or_else(|| Error::Spec("missing key: channel_norm".into()))?;
        let sigmoid = sigmoid.ok_or_else(|| Error::Spec("missing key: sigmoid".into()))?;
        if layers + 1 != channels.len() {
            return Err(Error::Spec(format!(
                "layers={layers} disagrees with {}-entry channel list",
                channels.len()
            )));
        }
        DecoderSpec::new(channels, latent_side, channel_norm, sigmoid)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// The fixed input code Z_1: one row per latent grid cell, one column per
/// input channel. Drawn once, never optimized.
#[derive(Debug, Clone)]
pub struct LatentCode {
    grid: (usize, usize),
    z: DenseMatrix,
}

impl LatentCode {
    /// i.i.d. Uniform[0, 1) entries on the spec's square latent grid,
    /// drawn in row-major order.
    pub fn sample(spec: &DecoderSpec, rng: &mut SeededRng) -> Self {
        let side = spec.latent_side();
        let z = rng.uniform_matrix(side * side, spec.latent_channels());
        LatentCode { grid: (side, side), z }
    }

    /// Wraps an explicit code on an arbitrary grid. Exists for tests and
    /// 1-D toys; `sample` is the canonical constructor.
    pub fn from_matrix(grid_h: usize, grid_w: usize, z: DenseMatrix) -> Result<Self> {
        if z.rows() != grid_h * grid_w {
            return Err(Error::Shape(format!(
                "latent grid {grid_h}x{grid_w} needs {} rows, matrix has {}",
                grid_h * grid_w,
                z.rows()
            )));
        }
        Ok(LatentCode { grid: (grid_h, grid_w), z })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.z.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    mats: Vec<DenseMatrix>,
}

impl DecoderWeights {
    /// Scaled-uniform fan-based init: layer l is i.i.d. Uniform(-b, b)
    /// with b = sqrt(6 / (k_l + k_{l+1})), matrices drawn in layer order
    /// and entries in row-major order.
    pub fn init(spec: &DecoderSpec, rng: &mut SeededRng) -> Self {
        let mats = spec
            .weight_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let b = (6.0 / (rows + cols) as f64).sqrt();
                let mut m = DenseMatrix::zeros(rows, cols);
                for v in m.data_mut() {
                    *v = rng.uniform_in(-b, b);
                }
                m
            })
            .collect();
        DecoderWeights { mats }
    }

    pub fn zeros(spec: &DecoderSpec) -> Self {
        let mats = spec
            .weight_shapes()
            .into_iter()
            .map(|(r, c)| DenseMatrix::zeros(r, c))
            .collect();
        DecoderWeights { mats }
    }

    pub fn from_matrices(spec: &DecoderSpec, mats: Vec<DenseMatrix>) -> Result<Self> {
        let shapes: Vec<(usize, usize)> = mats.iter().map(|m| m.shape()).collect();
        if shapes != spec.weight_shapes() {
            return Err(Error::Shape(format!(
                "weight shapes {shapes:?} do not match spec {:?}",
                spec.weight_shapes()
            )));
        }
        Ok(DecoderWeights { mats })
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.mats
    }

    pub fn matrices_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.mats
    }

    pub fn param_count(&self) -> usize {
        self.mats.iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(|m| m.is_finite())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for m in &self.mats {
            flat.extend_from_slice(m.data());
        }
        flat
    }

    pub fn from_flat(spec: &DecoderSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{} flat values for {} parameters",
                flat.len(),
                spec.param_count()
            )));
        }
        let mut mats = Vec::new();
        let mut off = 0;
        for (r, c) in spec.weight_shapes() {
            mats.push(DenseMatrix::from_vec(r, c, flat[off..off + r * c].to_vec())?);
            off += r * c;
        }
        Ok(DecoderWeights { mats })
    }
}

struct HiddenLayerTape {
    input: DenseMatrix,       // Z_l
    grid: (usize, usize),     // spatial grid of Z_l's rows
    mask: Vec<bool>,          // relu mask over Z_l W_l
    post_relu: DenseMatrix,   // relu(Z_l W_l), before any normalization
    // (standardized activations, per-channel 1/sqrt(var + eps)); None when
    // channel norm is off.
    norm: Option<(DenseMatrix, Vec<f64>)>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTape {
    layers: Vec<HiddenLayerTape>,
    z_final: DenseMatrix,
    output: ImageVector,
    weight_shapes: Vec<(usize, usize)>,
    use_sigmoid: bool,
}

impl ForwardTape {
    pub fn output(&self) -> &ImageVector {
        &self.output
    }

    /// Post-ReLU activations of hidden layer `l`, before normalization.
    pub fn post_relu(&self, l: usize) -> &DenseMatrix {
        &self.layers[l].post_relu
    }

    /// Standardized activations of hidden layer `l`, when norm is on.
    pub fn normalized(&self, l: usize) -> Option<&DenseMatrix> {
        self.layers[l].norm.as_ref().map(|(c, _)| c)
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len()
    }
}

fn stable_sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-column standardization to mean 0 / variance 1 (population variance,
/// floored by NORM_EPS). Returns the standardized matrix and per-column
/// 1/sqrt(var + eps).
fn standardize_columns(m: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let (rows, cols) = m.shape();
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut inv_s = vec![0.0; cols];
    let n = rows as f64;
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += m.get(r, c);
        }
        mean /= n;
        let mut var = 0.0;
        for r in 0..rows {
            let d = m.get(r, c) - mean;
            var += d * d;
        }
        var /= n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_s[c] = is;
        for r in 0..rows {
            out.set(r, c, (m.get(r, c) - mean) * is);
        }
    }
    (out, inv_s)
}

/// Backward of standardize_columns: given upstream dC, the standardized
/// values C and 1/s per column, returns dB.
fn standardize_backward(dc: &DenseMatrix, c: &DenseMatrix, inv_s: &[f64]) -> DenseMatrix {
    let (rows, cols) = dc.shape();
    let n = rows as f64;
    let mut out = DenseMatrix::zeros(rows, cols);
    for j in 0..cols {
        let mut g_mean = 0.0;
        let mut gc_mean = 0.0;
        for r in 0..rows {
            g_mean += dc.get(r, j);
            gc_mean += dc.get(r, j) * c.get(r, j);
        }
        g_mean /= n;
        gc_mean /= n;
        for r in 0..rows {
            let v = inv_s[j] * (dc.get(r, j) - g_mean - c.get(r, j) * gc_mean);
            out.set(r, j, v);
        }
    }
    out
}

/// Upsamples every column of `m`, each treated as a row-major grid.
fn upsample_columns(m: &DenseMatrix, grid: (usize, usize)) -> (DenseMatrix, (usize, usize)) {
    let (h, w) = grid;
    debug_assert_eq!(m.rows(), h * w);
    let (uh, uw) = (upsampled_len(h), upsampled_len(w));
    let mut out = DenseMatrix::zeros(uh * uw, m.cols());
    for c in 0..m.cols() {
        let col = DenseMatrix::from_fn(h, w, |r, q| m.get(r * w + q, c));
        let up = bilinear_upsample_2d(&col);
        for (idx, &v) in up.data().iter().enumerate() {
            out.set(idx, c, v);
        }
    }
    (out, (uh, uw))
}

fn upsample_adjoint_columns(g: &DenseMatrix, in_grid: (usize, usize)) -> Result<DenseMatrix> {
    let (h, w) = in_grid;
    let (uh, uw) = (upsampled_len(h), upsampled_len(w));
    let mut out = DenseMatrix::zeros(h * w, g.cols());
    for c in 0..g.cols() {
        let col = DenseMatrix::from_fn(uh, uw, |r, q| g.get(r * uw + q, c));
        let back = bilinear_upsample_adjoint(&col, h, w)?;
        for (idx, &v) in back.data().iter().enumerate() {
            out.set(idx, c, v);
        }
    }
    Ok(out)
}

/// Runs the decoder. The output is the row-major flattened final grid
/// (channel-interleaved if the spec asks for more than one output
/// channel, which no bundled configuration does).
pub fn forward(
    spec: &DecoderSpec,
    weights: &DecoderWeights,
    latent: &LatentCode,
) -> Result<(ImageVector, ForwardTape)> {
    let shapes: Vec<(usize, usize)> = weights.matrices().iter().map(|m| m.shape()).collect();
    if shapes != spec.weight_shapes() {
        return Err(Error::Shape(format!(
            "weights {shapes:?} do not fit spec {:?}",
            spec.weight_shapes()
        )));
    }
    if latent.channels() != spec.latent_channels() {
        return Err(Error::Shape(format!(
            "latent has {} channels, spec wants {}",
            latent.channels(),
            spec.latent_channels()
        )));
    }

    let num_layers = spec.num_layers();
    let mut z = latent.matrix().clone();
    let mut grid = latent.grid();
    let mut layers = Vec::with_capacity(num_layers - 1);

    for l in 0..num_layers - 1 {
        let a = z.mat_mul(&weights.matrices()[l])?;
        let mask: Vec<bool> = a.data().iter().map(|&v| v > 0.0).collect();
        let mut b = a;
        for v in b.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let (pre_up, norm) = if spec.use_channel_norm() {
            let (c, inv_s) = standardize_columns(&b);
            (c.clone(), Some((c, inv_s)))
        } else {
            (b.clone(), None)
        };
        let (up, next_grid) = upsample_columns(&pre_up, grid);
        layers.push(HiddenLayerTape { input: z, grid, mask, post_relu: b, norm });
        z = up;
        grid = next_grid;
    }

    let out_mat = z.mat_mul(&weights.matrices()[num_layers - 1])?;
    let k_out = spec.output_channels();
    let mut data = out_mat.data().to_vec();
    if spec.use_output_sigmoid() {
        for v in &mut data {
            *v = stable_sigmoid(*v);
        }
    }
    let output = ImageVector::new(grid.0, grid.1 * k_out, data)?;

    let tape = ForwardTape {
        layers,
        z_final: z,
        output: output.clone(),
        weight_shapes: shapes,
        use_sigmoid: spec.use_output_sigmoid(),
    };
    Ok((output, tape))
}

/// Gradients of <upstream, G(w; z)> with respect to every weight matrix,
/// reusing the tape of a forward pass made with the same weights.
pub fn grad_from_tape(
    weights: &DecoderWeights,
    tape: &ForwardTape,
    upstream: &[f64],
) -> Result<Vec<DenseMatrix>> {
    let shapes: Vec<(usize, usize)> = weights.matrices().iter().map(|m| m.shape()).collect();
    if shapes != tape.weight_shapes {
        return Err(Error::Shape(format!(
            "tape was recorded for shapes {:?}, weights are {shapes:?}",
            tape.weight_shapes
        )));
    }
    if upstream.len() != tape.output.len() {
        return Err(Error::Shape(format!(
            "upstream of length {} against output of length {}",
            upstream.len(),
            tape.output.len()
        )));
    }

    let num_layers = shapes.len();
    let k_out = shapes[num_layers - 1].1;
    let d_out = tape.z_final.rows();

    // dL/d(pre-activation output), folded through the sigmoid if present.
    let mut g = DenseMatrix::from_vec(d_out, k_out, upstream.to_vec())?;
    if tape.use_sigmoid {
        for (gv, &x) in g.data_mut().iter_mut().zip(tape.output.data()) {
            *gv *= x * (1.0 - x);
        }
    }

    let mut grads = vec![DenseMatrix::zeros(0, 0); num_layers];
    grads[num_layers - 1] = tape.z_final.transpose().mat_mul(&g)?;
    let mut dz = g.mat_mul(&weights.matrices()[num_layers - 1].transpose())?;

    for l in (0..num_layers - 1).rev() {
        let layer = &tape.layers[l];
        let dc = upsample_adjoint_columns(&dz, layer.grid)?;
        let db = match &layer.norm {
            Some((c, inv_s)) => standardize_backward(&dc, c, inv_s),
            None => dc,
        };
        let mut da = db;
        for (v, &keep) in da.data_mut().iter_mut().zip(layer.mask.iter()) {
            if !keep {
                *v = 0.0;
            }
        }
        grads[l] = layer.input.transpose().mat_mul(&da)?;
        if l > 0 {
            dz = da.mat_mul(&weights.matrices()[l].transpose())?;
        }
    }
    Ok(grads)
}

/// Gradients of <upstream, G(w; z)>: runs a fresh forward pass and
/// backpropagates through its tape.
pub fn grad_weights(
    spec: &DecoderSpec,
    weights: &DecoderWeights,
    latent: &LatentCode,
    upstream: &[f64],
) -> Result<Vec<DenseMatrix>> {
    let (_, tape) = forward(spec, weights, latent)?;
    grad_from_tape(weights, &tape, upstream)
}

/// Projects `target` onto the decoder range: momentum gradient descent on
/// w over ||target - G(w; z)||^2, warm-started, returning the best weights
/// seen and their fit loss. The warm start itself is a candidate, so the
/// result is never worse than the starting point.
pub fn project(
    spec: &DecoderSpec,
    latent: &LatentCode,
    target: &[f64],
    warm_start: &DecoderWeights,
    inner_iters: usize,
    inner_lr: f64,
) -> Result<(DecoderWeights, f64)> {
    if !inner_lr.is_finite() || inner_lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "inner_lr must be positive and finite, got {inner_lr}"
        )));
    }

    let mut w = warm_start.clone();
    let (x, mut tape) = forward(spec, &w, latent)?;
    if target.len() != x.len() {
        return Err(Error::Shape(format!(
            "projection target of length {} against decoder output of length {}",
            target.len(),
            x.len()
        )));
    }

    let fit = |img: &ImageVector| -> f64 {
        img.data()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };

    let initial = fit(&x);
    if !initial.is_finite() {
        return Err(Error::NonFinite("projection starting loss".into()));
    }
    let mut best_w = w.clone();
    let mut best_loss = initial;
    if initial == 0.0 {
        return Ok((best_w, 0.0));
    }
    let limit = DIVERGENCE_FACTOR * initial;

    let mut residual: Vec<f64> = x.data().iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
    let mut velocity: Vec<DenseMatrix> = w
        .matrices()
        .iter()
        .map(|m| DenseMatrix::zeros(m.rows(), m.cols()))
        .collect();

    for iter in 1..=inner_iters {
        let grads = grad_from_tape(&w, &tape, &residual)?;
        for ((v, g), m) in velocity.iter_mut().zip(&grads).zip(w.matrices_mut()) {
            v.scale(PROJECT_MOMENTUM);
            v.add_scaled(g, 1.0)?;
            m.add_scaled(v, -inner_lr)?;
        }
        let (x, new_tape) = forward(spec, &w, latent)?;
        tape = new_tape;
        let loss = fit(&x);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("projection loss at inner iteration {iter}")));
        }
        if loss > limit {
            return Err(Error::Diverged { iter, loss, limit });
        }
        if loss < best_loss {
            best_loss = loss;
            best_w = w.clone();
        }
        for ((r, &xv), &tv) in residual.iter_mut().zip(x.data()).zip(target) {
            *r = 2.0 * (xv - tv);
        }
    }
    Ok((best_w, best_loss))
}

/// Squared-error fit of a decoder output against a target vector.
pub fn fit_loss(x: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), target.len());
    l2_norm_sq(&crate::numeric::sub(x, target))
}
