//! Dense encoder, decoder and softmax classifier with hand-written backward
//! passes, plus the reconstruction and confidence losses.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, matmul_tn, Mat};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 256];
pub const DEFAULT_LATENT: usize = 128;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// Row-wise softmax, computed with max subtraction.
    Softmax,
}

impl Activation {
    fn apply(self, pre: &Mat) -> Mat {
        match self {
            Activation::Identity => pre.clone(),
            Activation::Relu => pre.map(|v| v.max(0.0)),
            Activation::LeakyRelu(a) => pre.map(|v| if v > 0.0 { v } else { a * v }),
            Activation::Sigmoid => pre.map(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Softmax => softmax_rows(pre),
        }
    }

    /// Gradient at the pre-activation given the gradient at the output.
    fn backward(self, pre: &Mat, out: &Mat, d_out: &Mat) -> Mat {
        match self {
            Activation::Identity => d_out.clone(),
            Activation::Relu => Mat::from_fn(pre.rows(), pre.cols(), |i, j| {
                if pre[(i, j)] > 0.0 {
                    d_out[(i, j)]
                } else {
                    0.0
                }
            }),
            Activation::LeakyRelu(a) => Mat::from_fn(pre.rows(), pre.cols(), |i, j| {
                if pre[(i, j)] > 0.0 {
                    d_out[(i, j)]
                } else {
                    a * d_out[(i, j)]
                }
            }),
            Activation::Sigmoid => Mat::from_fn(pre.rows(), pre.cols(), |i, j| {
                let y = out[(i, j)];
                d_out[(i, j)] * y * (1.0 - y)
            }),
            Activation::Softmax => {
                let mut d = Mat::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let p = out.row(i);
                    let g = d_out.row(i);
                    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                    for (k, v) in d.row_mut(i).iter_mut().enumerate() {
                        *v = p[k] * (g[k] - dot);
                    }
                }
                d
            }
        }
    }

    fn tag(self) -> (u8, f64) {
        match self {
            Activation::Identity => (0, 0.0),
            Activation::Relu => (1, 0.0),
            Activation::LeakyRelu(a) => (2, a),
            Activation::Sigmoid => (3, 0.0),
            Activation::Softmax => (4, 0.0),
        }
    }

    fn from_tag(tag: u8, param: f64) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 if param > 0.0 && param < 1.0 => Activation::LeakyRelu(param),
            3 => Activation::Sigmoid,
            4 => Activation::Softmax,
            _ => return None,
        })
    }
}

pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Mat,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Layer {
            weight: Mat::from_fn(output, input, |_, _| rng.random_range(-limit..limit)),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Per-layer inputs, pre-activations and outputs from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
    outputs: Vec<Mat>,
}

/// A stack of dense layers. An empty stack is the identity map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Layer widths `widths[0] -> widths[1] -> ...`, `hidden` activation on all
    /// but the last layer.
    pub fn init(widths: &[usize], hidden: Activation, last: Activation, rng: &mut impl Rng) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Layer::init(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(Layer::input_width)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(Layer::output_width)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn check_input(&self, x: &Mat, op: &'static str) -> Result<()> {
        if let Some(w) = self.input_width() {
            if x.cols() != w {
                return Err(Error::DimensionMismatch {
                    op,
                    left: x.shape(),
                    right: (w, self.output_width().unwrap_or(w)),
                });
            }
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &Mat) -> Result<Mat> {
        let mut pre = matmul_nt(x, &layer.weight)?;
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        Ok(pre)
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x, "mlp forward")?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.activation.apply(&Self::affine(layer, &h)?);
        }
        h.ensure_finite("mlp forward")
    }

    pub fn forward_cached(&self, x: &Mat) -> Result<(Mat, MlpCache)> {
        self.check_input(x, "mlp forward")?;
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for layer in &self.layers {
            let pre = Self::affine(layer, &h)?;
            let out = layer.activation.apply(&pre);
            cache.inputs.push(std::mem::replace(&mut h, out.clone()));
            cache.pre.push(pre);
            cache.outputs.push(out);
        }
        Ok((h.ensure_finite("mlp forward")?, cache))
    }

    /// Parameter gradients and the gradient at the input, given the gradient
    /// at the output.
    pub fn backward(&self, cache: &MlpCache, d_out: &Mat) -> Result<(MlpGrads, Mat)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::BackwardWithoutForward("cache does not match network"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let d_pre = layer
                .activation
                .backward(&cache.pre[idx], &cache.outputs[idx], &d);
            let weight = matmul_tn(&d_pre, &cache.inputs[idx])?;
            let bias = d_pre.col_sums();
            d = crate::linalg::matmul(&d_pre, &layer.weight)?;
            grads.push(LayerGrad { weight, bias });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, d))
    }
}

/// Encoder `w_e`, decoder `w_d` and classifier `w_fc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub classifier: Mlp,
}

impl ModelParams {
    /// Encoder `D -> hidden... -> latent` (LeakyReLU 0.2), mirrored decoder
    /// (ReLU, sigmoid output), classifier `latent -> C` (softmax).
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut enc_widths = vec![input_dim];
        enc_widths.extend_from_slice(hidden);
        enc_widths.push(latent_dim);
        let dec_widths: Vec<usize> = enc_widths.iter().rev().cloned().collect();
        let leaky = Activation::LeakyRelu(LEAKY_SLOPE);
        ModelParams {
            encoder: Mlp::init(&enc_widths, leaky, leaky, rng),
            decoder: Mlp::init(&dec_widths, Activation::Relu, Activation::Sigmoid, rng),
            classifier: Mlp::init(
                &[latent_dim, num_classes],
                Activation::Identity,
                Activation::Softmax,
                rng,
            ),
        }
    }

    /// Identity encoder, no decoder, softmax classifier on raw inputs.
    pub fn identity_encoder(input_dim: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        ModelParams {
            encoder: Mlp::default(),
            decoder: Mlp::default(),
            classifier: Mlp::init(
                &[input_dim, num_classes],
                Activation::Identity,
                Activation::Softmax,
                rng,
            ),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_width().unwrap_or(0)
    }

    pub fn input_width(&self) -> Option<usize> {
        self.encoder
            .input_width()
            .or_else(|| self.classifier.input_width())
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.decoder.num_params() + self.classifier.num_params()
    }

    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Mat) -> Result<Mat> {
        self.decoder.forward(z)
    }

    pub fn classify(&self, z: &Mat) -> Result<Mat> {
        self.classifier.forward(z)
    }

    /// Class probabilities for raw inputs.
    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        self.classify(&self.encode(x)?)
    }

    /// Encodes `x` and runs the requested heads, keeping everything needed
    /// for [`ModelParams::backward`].
    pub fn forward(&self, x: &Mat, heads: Heads) -> Result<ForwardState> {
        let (latent, enc) = self.encoder.forward_cached(x)?;
        let recon = if heads.decoder {
            Some(self.decoder.forward_cached(&latent)?)
        } else {
            None
        };
        let probs = if heads.classifier {
            Some(self.classifier.forward_cached(&latent)?)
        } else {
            None
        };
        Ok(ForwardState {
            latent,
            enc,
            recon,
            probs,
        })
    }

    /// Backpropagates gradients arriving at the latent code, the
    /// reconstruction and the class probabilities; all paths meet at the
    /// latent node before the encoder pass.
    pub fn backward(&self, state: &ForwardState, grads: &OutputGrads) -> Result<ModelGrads> {
        let mut d_latent = match &grads.latent {
            Some(d) => d.clone(),
            None => Mat::zeros(state.latent.rows(), state.latent.cols()),
        };
        let decoder = match (&grads.recon, &state.recon) {
            (Some(d), Some((_, cache))) => {
                let (g, dz) = self.decoder.backward(cache, d)?;
                d_latent.axpy(1.0, &dz)?;
                g
            }
            (Some(_), None) => return Err(Error::BackwardWithoutForward("decoder head not run")),
            (None, _) => MlpGrads::zeros_like(&self.decoder),
        };
        let classifier = match (&grads.probs, &state.probs) {
            (Some(d), Some((_, cache))) => {
                let (g, dz) = self.classifier.backward(cache, d)?;
                d_latent.axpy(1.0, &dz)?;
                g
            }
            (Some(_), None) => {
                return Err(Error::BackwardWithoutForward("classifier head not run"))
            }
            (None, _) => MlpGrads::zeros_like(&self.classifier),
        };
        let (encoder, _) = self.encoder.backward(&state.enc, &d_latent)?;
        Ok(ModelGrads {
            encoder,
            decoder,
            classifier,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = checkpoint::encode(self);
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        checkpoint::decode(&bytes)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub decoder: bool,
    pub classifier: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        decoder: true,
        classifier: true,
    };
}

#[derive(Debug, Clone)]
pub struct ForwardState {
    pub latent: Mat,
    enc: MlpCache,
    recon: Option<(Mat, MlpCache)>,
    probs: Option<(Mat, MlpCache)>,
}

impl ForwardState {
    pub fn recon(&self) -> Option<&Mat> {
        self.recon.as_ref().map(|(m, _)| m)
    }

    pub fn probs(&self) -> Option<&Mat> {
        self.probs.as_ref().map(|(m, _)| m)
    }
}

#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub latent: Option<Mat>,
    pub recon: Option<Mat>,
    pub probs: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub classifier: MlpGrads,
}

/// Mean over rows of the squared reconstruction error (summed over features).
pub fn reconstruction_loss(recon: &Mat, x: &Mat) -> Result<(f64, Mat)> {
    if recon.shape() != x.shape() {
        return Err(Error::DimensionMismatch {
            op: "ae_loss",
            left: recon.shape(),
            right: x.shape(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyBatch("ae_loss"));
    }
    let n = x.rows() as f64;
    let diff = recon.sub(x)?;
    let loss = diff.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// `E_x |x - decode(encode(x))|^2` over the batch.
pub fn ae_loss(params: &ModelParams, x: &Mat) -> Result<f64> {
    let recon = params.decode(&params.encode(x)?)?;
    Ok(reconstruction_loss(&recon, x)?.0)
}

fn validate_probs(probs: &Mat, prior: &[f64]) -> Result<()> {
    if probs.rows() == 0 {
        return Err(Error::EmptyBatch("confidence_loss"));
    }
    if probs.cols() != prior.len() {
        return Err(Error::DimensionMismatch {
            op: "confidence_loss",
            left: probs.shape(),
            right: (prior.len(), 1),
        });
    }
    let bad = |v: f64| !v.is_finite() || v < -1e-12 || v > 1.0 + 1e-12;
    if probs.as_slice().iter().any(|&v| bad(v)) || prior.iter().any(|&v| bad(v)) {
        return Err(Error::InvalidProbabilities(
            "entries must lie in [0, 1]".into(),
        ));
    }
    for i in 0..probs.rows() {
        let s: f64 = probs.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidProbabilities(format!(
                "row {i} sums to {s}"
            )));
        }
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidProbabilities(format!("prior sums to {s}")));
    }
    Ok(())
}

/// Mean prediction entropy plus cross-entropy of the prior against the
/// batch-mean prediction; logs are floored at `1e-12`. Returns the loss and
/// its gradient with respect to `probs`.
pub fn confidence_loss_grad(probs: &Mat, prior: &[f64]) -> Result<(f64, Mat)> {
    validate_probs(probs, prior)?;
    let n = probs.rows() as f64;
    let mean = probs.col_sums().into_iter().map(|s| s / n).collect::<Vec<_>>();
    let mut loss = 0.0;
    let mut grad = Mat::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        for (c, &p) in probs.row(i).iter().enumerate() {
            let (log, dlog) = if p > LOG_FLOOR {
                (p.ln(), 1.0)
            } else {
                (LOG_FLOOR.ln(), 0.0)
            };
            loss -= p * log / n;
            grad[(i, c)] = -(log + dlog) / n;
        }
    }
    for (c, (&q, &m)) in prior.iter().zip(&mean).enumerate() {
        if m > LOG_FLOOR {
            loss -= q * m.ln();
            let g = -q / (m * n);
            for i in 0..probs.rows() {
                grad[(i, c)] += g;
            }
        } else {
            loss -= q * LOG_FLOOR.ln();
        }
    }
    Ok((loss, grad))
}

pub fn confidence_loss(probs: &Mat, prior: &[f64]) -> Result<f64> {
    Ok(confidence_loss_grad(probs, prior)?.0)
}

/// Binary checkpoint container, all integers and floats little-endian:
///
/// ```text
/// "KLNC"          4 bytes magic
/// version         u32 (= 1)
/// 3 x network     encoder, decoder, classifier
///   n_layers      u32
///   n_layers x layer
///     out, in     u32, u32
///     activation  u8 tag (0 identity, 1 relu, 2 leaky relu, 3 sigmoid, 4 softmax)
///     act_param   f64 (leaky slope, else 0)
///     weight      out*in f64, row-major
///     bias        out f64
/// ```
///
/// Trailing bytes are rejected.
pub mod checkpoint {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"KLNC";
    pub const VERSION: u32 = 1;

    pub fn encode(params: &ModelParams) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for net in [&params.encoder, &params.decoder, &params.classifier] {
            out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
            for layer in &net.layers {
                out.extend_from_slice(&(layer.weight.rows() as u32).to_le_bytes());
                out.extend_from_slice(&(layer.weight.cols() as u32).to_le_bytes());
                let (tag, param) = layer.activation.tag();
                out.push(tag);
                out.extend_from_slice(&param.to_le_bytes());
                for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.bytes.len() - self.pos < n {
                return Err(self.err(format!(
                    "truncated: need {n} bytes, have {}",
                    self.bytes.len() - self.pos
                )));
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }

        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }

        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }

        fn err(&self, reason: String) -> Error {
            Error::Checkpoint {
                offset: self.pos,
                reason,
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let mut nets = Vec::with_capacity(3);
        for _ in 0..3 {
            let n_layers = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n_layers.min(64));
            let mut prev_out: Option<usize> = None;
            for _ in 0..n_layers {
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                if let Some(p) = prev_out {
                    if p != cols {
                        return Err(r.err(format!("layer input {cols} does not match previous output {p}")));
                    }
                }
                prev_out = Some(rows);
                let tag = r.take(1)?[0];
                let param = r.f64()?;
                let activation = Activation::from_tag(tag, param)
                    .ok_or_else(|| r.err(format!("bad activation tag {tag} ({param})")))?;
                let count = rows
                    .checked_mul(cols)
                    .filter(|c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                    .ok_or_else(|| r.err(format!("implausible layer shape {rows}x{cols}")))?;
                let mut w = Vec::with_capacity(count);
                for _ in 0..count {
                    w.push(r.f64()?);
                }
                let mut bias = Vec::with_capacity(rows);
                for _ in 0..rows {
                    bias.push(r.f64()?);
                }
                if w.iter().chain(&bias).any(|v| !v.is_finite()) {
                    return Err(r.err("non-finite parameter".into()));
                }
                layers.push(Layer {
                    weight: Mat::new(rows, cols, w)?,
                    bias,
                    activation,
                });
            }
            nets.push(Mlp { layers });
        }
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let classifier = nets.pop().unwrap();
        let decoder = nets.pop().unwrap();
        let encoder = nets.pop().unwrap();
        Ok(ModelParams {
            encoder,
            decoder,
            classifier,
        })
    }
}
