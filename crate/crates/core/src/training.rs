//! Optimizers, learning-rate schedule, minibatch sampling and the training
//! loops.
//!
//! One step draws a labelled batch `s` and a second batch `t`, encodes both,
//! predicts soft labels for `t`, and minimizes
//!
//! ```text
//! CMMD(z_s, y_s ; z_t, y_hat_t) + beta * AE(x_s u x_t) [+ beta2 * confidence(y_hat_t)]
//! ```
//!
//! The decoder only ever receives reconstruction gradients; the confidence
//! term reaches the encoder and classifier only.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::cmmd::{cmmd_forward_backward, GramPack, Leaves};
use crate::data::{split_labeled, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{one_hot, KernelSpec, DEFAULT_BANDWIDTHS};
use crate::linalg::Mat;
use crate::network::{
    confidence_loss_grad, reconstruction_loss, Heads, Mlp, MlpGrads, ModelGrads, ModelParams,
    OutputGrads, DEFAULT_HIDDEN, DEFAULT_LATENT,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    /// A decade below the batch-normalized reference rate of 0.02, which
    /// saturates the latent kernel within a few steps on this MLP.
    pub const SGD_DEFAULT: OptimizerKind = OptimizerKind::SgdMomentum {
        lr: 0.002,
        momentum: 0.9,
        weight_decay: 0.0005,
    };
    pub const ADAM_DEFAULT: OptimizerKind = OptimizerKind::Adam {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.99,
        eps: 1e-8,
    };

    pub fn base_lr(&self) -> f64 {
        match *self {
            OptimizerKind::SgdMomentum { lr, .. } | OptimizerKind::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(self, new_lr: f64) -> Self {
        match self {
            OptimizerKind::SgdMomentum {
                momentum,
                weight_decay,
                ..
            } => OptimizerKind::SgdMomentum {
                lr: new_lr,
                momentum,
                weight_decay,
            },
            OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => OptimizerKind::Adam {
                lr: new_lr,
                beta1,
                beta2,
                eps,
            },
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::SgdMomentum {
                lr,
                momentum,
                weight_decay,
            } => write!(f, "sgd:{lr},{momentum},{weight_decay}"),
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => write!(f, "adam:{lr},{beta1},{beta2},{eps}"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    /// `sgd`, `adam`, `sgd:lr,momentum,weight_decay`, `adam:lr,beta1,beta2,eps`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let nums = crate::kernels::parse_list(args)
            .map_err(|e| Error::InvalidConfig(format!("optimizer `{s}`: {e}")))?;
        let kind = match (name, nums.as_slice()) {
            ("sgd", []) => OptimizerKind::SGD_DEFAULT,
            ("sgd", [lr, momentum, weight_decay]) => OptimizerKind::SgdMomentum {
                lr: *lr,
                momentum: *momentum,
                weight_decay: *weight_decay,
            },
            ("adam", []) => OptimizerKind::ADAM_DEFAULT,
            ("adam", [lr, beta1, beta2, eps]) => OptimizerKind::Adam {
                lr: *lr,
                beta1: *beta1,
                beta2: *beta2,
                eps: *eps,
            },
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "optimizer `{s}`: expected sgd[:lr,momentum,wd] or adam[:lr,b1,b2,eps]"
                )))
            }
        };
        Ok(kind)
    }
}

/// Per-parameter-tensor optimizer state.
#[derive(Debug, Clone, Default)]
pub struct SlotState {
    pub velocity: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl SlotState {
    /// One update of `w` given gradient `g` at learning rate `lr`.
    ///
    /// SGD: `v <- momentum v + (g + wd w)`, `w <- w - lr v`.
    /// Adam: bias-corrected first/second moments.
    pub fn update(&mut self, kind: &OptimizerKind, w: &mut [f64], g: &[f64], lr: f64) {
        debug_assert_eq!(w.len(), g.len());
        match *kind {
            OptimizerKind::SgdMomentum {
                momentum,
                weight_decay,
                ..
            } => {
                if self.velocity.len() != w.len() {
                    self.velocity = vec![0.0; w.len()];
                }
                for ((wi, gi), vi) in w.iter_mut().zip(g).zip(&mut self.velocity) {
                    let d = gi + weight_decay * *wi;
                    *vi = momentum * *vi + d;
                    *wi -= lr * *vi;
                }
            }
            OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => {
                if self.m.len() != w.len() {
                    self.m = vec![0.0; w.len()];
                    self.v = vec![0.0; w.len()];
                }
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((wi, gi), mi), vi) in w.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *wi -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Encoder,
    Decoder,
    Classifier,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    slots: [Vec<SlotState>; 3],
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            slots: Default::default(),
        }
    }

    pub fn step(&mut self, net: Net, mlp: &mut Mlp, grads: &MlpGrads, lr: f64) {
        let slots = &mut self.slots[net as usize];
        let params = mlp.param_slices_mut();
        if slots.len() != params.len() {
            *slots = vec![SlotState::default(); params.len()];
        }
        for ((w, g), slot) in params.into_iter().zip(grads.slices()).zip(slots.iter_mut()) {
            slot.update(&self.kind, w, g, lr);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    SemiSupervised,
    /// Kernel on raw inputs; only a softmax classifier is trained.
    IdentityAblation,
    /// Auto-encoder trained alone first, then frozen while the classifier
    /// is trained with CMMD.
    AePretrainAblation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Supervised => "supervised",
            Mode::SemiSupervised => "semi",
            Mode::IdentityAblation => "identity",
            Mode::AePretrainAblation => "ae-pretrain",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "supervised" => Mode::Supervised,
            "semi" | "semi-supervised" => Mode::SemiSupervised,
            "identity" => Mode::IdentityAblation,
            "ae-pretrain" | "ae" => Mode::AePretrainAblation,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown mode `{other}` (supervised, semi, identity, ae-pretrain)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lambda: f64,
    /// Reconstruction weight in supervised mode.
    pub beta: f64,
    /// Reconstruction weight in semi-supervised mode.
    pub beta1: f64,
    /// Confidence-loss weight in semi-supervised mode.
    pub beta2: f64,
    pub optimizer: OptimizerKind,
    /// `(epoch, multiplier)`: from `epoch` on the rate is multiplied by
    /// `multiplier` (cumulative).
    pub lr_schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub seed: u64,
    /// Data-side Gaussian mixture `sigma^2` values.
    pub bandwidths: Vec<f64>,
    pub label_kernel: KernelSpec,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Labelled samples for semi-supervised runs (and labelled-only baselines).
    pub n_labeled: Option<usize>,
    /// Overrides `floor(N / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    /// Auto-encoder epochs before the classifier phase of
    /// [`Mode::AePretrainAblation`]; defaults to `epochs`.
    pub pretrain_epochs: Option<usize>,
    /// Harden predicted labels to one-hot before the label kernel
    /// (diagnostic; blocks CMMD gradients to the classifier).
    pub hard_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::supervised()
    }
}

impl TrainConfig {
    /// SGD 0.002 / momentum 0.9 / weight decay 5e-4, x0.2 at epochs 50, 100, 130.
    pub fn supervised() -> Self {
        TrainConfig {
            batch_size: 100,
            lambda: 0.01,
            beta: 0.1,
            beta1: 0.1,
            beta2: 1.0,
            optimizer: OptimizerKind::SGD_DEFAULT,
            lr_schedule: vec![(50, 0.2), (100, 0.2), (130, 0.2)],
            epochs: 150,
            seed: 0,
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            label_kernel: KernelSpec::default(),
            latent_dim: DEFAULT_LATENT,
            hidden: DEFAULT_HIDDEN.to_vec(),
            n_labeled: None,
            steps_per_epoch: None,
            pretrain_epochs: None,
            hard_labels: false,
        }
    }

    /// Adam 1e-3 (0.9, 0.99) with a fixed rate.
    pub fn semi_supervised() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::ADAM_DEFAULT,
            lr_schedule: Vec::new(),
            ..TrainConfig::supervised()
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::SemiSupervised => TrainConfig::semi_supervised(),
            _ => TrainConfig::supervised(),
        }
    }

    pub fn data_kernel(&self) -> Result<KernelSpec> {
        KernelSpec::gaussian(&self.bandwidths)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        for (name, v) in [("beta", self.beta), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        let rates_ok = match self.optimizer {
            OptimizerKind::SgdMomentum {
                lr,
                momentum,
                weight_decay,
            } => lr > 0.0 && (0.0..1.0).contains(&momentum) && weight_decay >= 0.0,
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
        };
        if !rates_ok {
            return bad(format!("invalid optimizer settings {}", self.optimizer));
        }
        if self.lr_schedule.iter().any(|&(_, m)| !(m > 0.0 && m <= 1.0)) {
            return bad("lr_schedule multipliers must be in (0, 1]".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive".into());
        }
        self.data_kernel()?;
        self.label_kernel.validate()?;
        Ok(())
    }

    /// Piecewise-constant, non-increasing learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|&&(at, _)| epoch >= at)
            .fold(self.optimizer.base_lr(), |lr, &(_, m)| lr * m)
    }
}

/// Loss components of one step (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub cmmd: f64,
    pub ae: f64,
    pub conf: f64,
    /// Weighted objective actually minimized.
    pub total: f64,
}

/// Weights of the non-CMMD terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub ae: f64,
    pub conf: f64,
}

/// Full objective and its gradient for one pair of batches.
///
/// `y_s` holds label vectors (one-hot for true labels). `prior` is needed
/// only when `weights.conf > 0`.
#[allow(clippy::too_many_arguments)]
pub fn objective_and_grads(
    params: &ModelParams,
    data_kernel: &KernelSpec,
    label_kernel: &KernelSpec,
    lambda: f64,
    weights: ObjectiveWeights,
    x_s: &Mat,
    y_s: &Mat,
    x_t: &Mat,
    prior: Option<&[f64]>,
    hard_labels: bool,
) -> Result<(StepLosses, ModelGrads)> {
    if x_s.rows() == 0 || x_t.rows() == 0 {
        return Err(Error::EmptyBatch("training step"));
    }
    if y_s.cols() != params.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "labels have {} classes, classifier outputs {}",
            y_s.cols(),
            params.num_classes()
        )));
    }
    let (n_s, n_t) = (x_s.rows(), x_t.rows());
    let has_decoder = !params.decoder.is_identity();
    let x = Mat::vstack(x_s, x_t)?;
    let state = params.forward(
        &x,
        Heads {
            decoder: has_decoder,
            classifier: true,
        },
    )?;
    let z_s = state.latent.row_block(0, n_s);
    let z_t = state.latent.row_block(n_s, n_s + n_t);
    let probs = state.probs().expect("classifier head requested");
    let soft_t = probs.row_block(n_s, n_s + n_t);
    let y_t = if hard_labels {
        let idx: Vec<usize> = (0..n_t).map(|i| argmax(soft_t.row(i))).collect();
        one_hot(&idx, soft_t.cols())
    } else {
        soft_t.clone()
    };

    let pack = GramPack::from_leaves(
        Leaves {
            data_kernel: data_kernel.clone(),
            label_kernel: label_kernel.clone(),
            z_s,
            y_s: y_s.clone(),
            z_t,
            y_t,
        },
        lambda,
    )?;
    let (value, g) = cmmd_forward_backward(&pack, 1.0)?;

    let d_latent = Mat::vstack(&g.z_s, &g.z_t)?;
    let mut d_probs = Mat::zeros(n_s + n_t, probs.cols());
    if !hard_labels {
        for i in 0..n_t {
            d_probs.row_mut(n_s + i).copy_from_slice(g.y_t.row(i));
        }
    }

    let mut losses = StepLosses {
        cmmd: value.total,
        ..Default::default()
    };
    let mut d_recon = None;
    if let Some(recon) = state.recon() {
        let (ae, d) = reconstruction_loss(recon, &x)?;
        losses.ae = ae;
        if weights.ae > 0.0 {
            d_recon = Some(d.scale(weights.ae));
        }
    }
    if weights.conf > 0.0 {
        let prior = prior.ok_or_else(|| {
            Error::InvalidConfig("confidence loss needs a class prior".into())
        })?;
        let (conf, d) = confidence_loss_grad(&soft_t, prior)?;
        losses.conf = conf;
        for i in 0..n_t {
            for (o, v) in d_probs.row_mut(n_s + i).iter_mut().zip(d.row(i)) {
                *o += weights.conf * v;
            }
        }
    }
    losses.total = losses.cmmd + weights.ae * losses.ae + weights.conf * losses.conf;
    if !losses.total.is_finite() {
        return Err(Error::NonFinite("training objective"));
    }
    let grads = params.backward(
        &state,
        &OutputGrads {
            latent: Some(d_latent),
            recon: d_recon,
            probs: Some(d_probs),
        },
    )?;
    Ok((losses, grads))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Parameters plus optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub config: TrainConfig,
    optimizer: Optimizer,
    data_kernel: KernelSpec,
    /// Updating the encoder; off for the frozen-encoder ablation phase.
    pub train_encoder: bool,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Optimizer::new(config.optimizer),
            data_kernel: config.data_kernel()?,
            params,
            config,
            train_encoder: true,
        })
    }

    fn apply(&mut self, grads: &ModelGrads, weights: ObjectiveWeights, lr: f64) {
        if self.train_encoder {
            self.optimizer
                .step(Net::Encoder, &mut self.params.encoder, &grads.encoder, lr);
        }
        if weights.ae > 0.0 && !self.params.decoder.is_identity() {
            self.optimizer
                .step(Net::Decoder, &mut self.params.decoder, &grads.decoder, lr);
        }
        self.optimizer
            .step(Net::Classifier, &mut self.params.classifier, &grads.classifier, lr);
    }

    fn step(
        &mut self,
        weights: ObjectiveWeights,
        x_s: &Mat,
        y_s: &[usize],
        x_t: &Mat,
        prior: Option<&[f64]>,
        lr: f64,
    ) -> Result<StepLosses> {
        let c = self.params.num_classes();
        if let Some(bad) = y_s.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let (losses, grads) = objective_and_grads(
            &self.params,
            &self.data_kernel,
            &self.config.label_kernel,
            self.config.lambda,
            weights,
            x_s,
            &one_hot(y_s, c),
            x_t,
            prior,
            self.config.hard_labels,
        )?;
        self.apply(&grads, weights, lr);
        Ok(losses)
    }

    /// CMMD between the labelled batch and predictions on `x_t`, plus
    /// `beta` times the reconstruction loss over both batches.
    pub fn supervised_step(&mut self, x_s: &Mat, y_s: &[usize], x_t: &Mat, lr: f64) -> Result<StepLosses> {
        let w = ObjectiveWeights {
            ae: self.config.beta,
            conf: 0.0,
        };
        self.step(w, x_s, y_s, x_t, None, lr)
    }

    /// As [`Trainer::supervised_step`] with `beta1` on reconstruction and
    /// `beta2` on the confidence loss of the predictions for `x_u`.
    pub fn semi_supervised_step(
        &mut self,
        x_l: &Mat,
        y_l: &[usize],
        x_u: &Mat,
        prior: &[f64],
        lr: f64,
    ) -> Result<StepLosses> {
        let w = ObjectiveWeights {
            ae: self.config.beta1,
            conf: self.config.beta2,
        };
        self.step(w, x_l, y_l, x_u, Some(prior), lr)
    }

    /// Auto-encoder pretraining step: the supervised objective without its
    /// CMMD term, i.e. `beta * AE`. Returns the unweighted reconstruction loss.
    pub fn ae_step(&mut self, x: &Mat, lr: f64) -> Result<f64> {
        let state = self.params.forward(
            x,
            Heads {
                decoder: true,
                classifier: false,
            },
        )?;
        let (loss, d) = reconstruction_loss(state.recon().expect("decoder head"), x)?;
        let d = d.scale(self.config.beta);
        let grads = self.params.backward(
            &state,
            &OutputGrads {
                recon: Some(d),
                ..Default::default()
            },
        )?;
        self.optimizer
            .step(Net::Encoder, &mut self.params.encoder, &grads.encoder, lr);
        self.optimizer
            .step(Net::Decoder, &mut self.params.decoder, &grads.decoder, lr);
        Ok(loss)
    }
}

/// Reshuffled passes over `0..n`; each batch is a contiguous slice of the
/// current permutation, and a new permutation starts when the pass runs out.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    perm: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        BatchSampler {
            perm: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let size = batch_size.min(self.perm.len());
        if self.pos + size > self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.perm[self.pos..self.pos + size].to_vec();
        self.pos += size;
        out
    }
}

/// Fraction of samples whose argmax prediction differs from the label; ties
/// go to the lowest class index.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    let labels = test.labels()?;
    if test.is_empty() {
        return Err(Error::EmptyBatch("evaluate"));
    }
    let mut wrong = 0usize;
    let chunk = 1000;
    let mut start = 0;
    while start < test.len() {
        let end = (start + chunk).min(test.len());
        let probs = params.predict(&test.x.row_block(start, end))?;
        for i in 0..probs.rows() {
            if argmax(probs.row(i)) != labels[start + i] {
                wrong += 1;
            }
        }
        start = end;
    }
    Ok(wrong as f64 / test.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cmmd: f64,
    pub ae: f64,
    pub conf: f64,
    pub lr: f64,
    pub test_error: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} cmmd={} ae={} conf={} lr={} test_error={}",
            self.epoch, self.cmmd, self.ae, self.conf, self.lr, self.test_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub mode: Mode,
    pub epochs: Vec<EpochRecord>,
    /// Error of the returned parameters on the test set.
    pub final_error: f64,
    /// Lowest per-epoch test error (logged only; never used for selection).
    pub best_error: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Line-oriented report: one `epoch=...` record per epoch, then a
    /// `final_error=... best_error=...` line. Wall time is excluded so that
    /// reports of identical runs are byte-identical.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out.push_str(&format!(
            "mode={} final_error={} best_error={}\n",
            self.mode, self.final_error, self.best_error
        ));
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: ModelParams,
}

/// Runs `mode` for `config.epochs` epochs, evaluating on `test` after every
/// epoch. `on_epoch` sees each record as it is produced.
pub fn train(
    train_set: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    mode: Mode,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    train_set.labels()?;
    test.labels()?;
    if train_set.dim() != test.dim() || train_set.num_classes != test.num_classes {
        return Err(Error::InvalidDataset(format!(
            "train ({}x{}, C={}) and test ({}x{}, C={}) disagree",
            train_set.len(),
            train_set.dim(),
            train_set.num_classes,
            test.len(),
            test.dim(),
            test.num_classes
        )));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyBatch("train"));
    }
    let started = Instant::now();
    let c = train_set.num_classes;
    let d = train_set.dim();
    let mut init_rng = rng::stream(config.seed, rng::INIT);
    let params = match mode {
        Mode::IdentityAblation => ModelParams::identity_encoder(d, c, &mut init_rng),
        _ => ModelParams::new(d, &config.hidden, config.latent_dim, c, &mut init_rng),
    };

    // labelled pool (s side) and second pool (t side)
    let (labeled, pool) = match (mode, config.n_labeled) {
        (Mode::SemiSupervised, None) => {
            return Err(Error::InvalidConfig(
                "semi-supervised mode needs n_labeled".into(),
            ))
        }
        (_, Some(n)) => {
            let (l, _) = split_labeled(train_set, n, config.seed)?;
            let pool = if mode == Mode::SemiSupervised {
                train_set.clone()
            } else {
                l.clone()
            };
            (l, pool)
        }
        (_, None) => (train_set.clone(), train_set.clone()),
    };
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| (train_set.len() / config.batch_size).max(1));

    let prior = labeled.class_prior()?;
    if mode == Mode::SemiSupervised && prior.iter().any(|&p| p == 0.0) {
        eprintln!(
            "warning: labelled subset misses a class; prior re-estimated as {prior:?}"
        );
    }
    let labels = labeled.labels()?.to_vec();

    let mut trainer = Trainer::new(params, config.clone())?;
    let mut records = Vec::with_capacity(config.epochs);
    let mut sampler_s = BatchSampler::new(labeled.len(), rng::stream(config.seed, rng::SHUFFLE_S));
    let mut sampler_t = BatchSampler::new(pool.len(), rng::stream(config.seed, rng::SHUFFLE_T));

    let mut epoch_base = 0;
    if mode == Mode::AePretrainAblation {
        let pre = config.pretrain_epochs.unwrap_or(config.epochs);
        let mut sampler = BatchSampler::new(pool.len(), rng::stream(config.seed, rng::SHUFFLE_T));
        for epoch in 0..pre {
            let lr = config.lr_at(epoch);
            let mut ae = 0.0;
            for _ in 0..steps {
                let idx = sampler.next_batch(config.batch_size);
                ae += trainer.ae_step(&pool.x.select_rows(&idx), lr)?;
            }
            let rec = EpochRecord {
                epoch,
                cmmd: 0.0,
                ae: ae / steps as f64,
                conf: 0.0,
                lr,
                test_error: evaluate(&trainer.params, test)?,
            };
            on_epoch(&rec);
            records.push(rec);
        }
        epoch_base = pre;
        trainer.train_encoder = false;
        trainer.optimizer = Optimizer::new(config.optimizer);
    }

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut sums = StepLosses::default();
        for _ in 0..steps {
            let is = sampler_s.next_batch(config.batch_size);
            let it = sampler_t.next_batch(config.batch_size);
            let x_s = labeled.x.select_rows(&is);
            let y_s: Vec<usize> = is.iter().map(|&i| labels[i]).collect();
            let x_t = pool.x.select_rows(&it);
            let l = match mode {
                Mode::SemiSupervised => trainer.semi_supervised_step(&x_s, &y_s, &x_t, &prior, lr)?,
                Mode::Supervised => trainer.supervised_step(&x_s, &y_s, &x_t, lr)?,
                Mode::IdentityAblation | Mode::AePretrainAblation => {
                    let w = ObjectiveWeights { ae: 0.0, conf: 0.0 };
                    trainer.step(w, &x_s, &y_s, &x_t, None, lr)?
                }
            };
            sums.cmmd += l.cmmd;
            sums.ae += l.ae;
            sums.conf += l.conf;
        }
        let n = steps as f64;
        let rec = EpochRecord {
            epoch: epoch_base + epoch,
            cmmd: sums.cmmd / n,
            ae: sums.ae / n,
            conf: sums.conf / n,
            lr,
            test_error: evaluate(&trainer.params, test)?,
        };
        on_epoch(&rec);
        records.push(rec);
    }

    let final_error = evaluate(&trainer.params, test)?;
    let best_error = records
        .iter()
        .map(|r| r.test_error)
        .fold(final_error, f64::min);
    Ok(TrainOutcome {
        report: TrainReport {
            mode,
            epochs: records,
            final_error,
            best_error,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
        params: trainer.params,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use rand::SeedableRng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 20,
            hidden: vec![8],
            latent_dim: 4,
            epochs: 3,
            seed: 3,
            ..TrainConfig::supervised()
        }
    }

    #[test]
    fn sgd_matches_closed_form() {
        let kind = OptimizerKind::SgdMomentum {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut slot = SlotState::default();
        let mut w = [2.0];
        let (mut v, mut expect) = (0.0, 2.0);
        for g in [0.5, -0.3, 0.2] {
            slot.update(&kind, &mut w, &[g], 0.1);
            v = 0.9 * v + (g + 0.01 * expect);
            expect -= 0.1 * v;
            assert_eq!(w[0], expect);
        }
        // hand-computed first step: v = 0.5 + 0.02 = 0.52, w = 2 - 0.052
        let mut slot = SlotState::default();
        let mut w = [2.0];
        slot.update(&kind, &mut w, &[0.5], 0.1);
        assert!((w[0] - 1.948).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_recurrence() {
        let kind = OptimizerKind::ADAM_DEFAULT;
        let mut slot = SlotState::default();
        let mut w = [1.0];
        let (mut m, mut v, mut expect) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in [0.3, -0.1, 0.4, 0.05, -0.2].into_iter().enumerate() {
            slot.update(&kind, &mut w, &[g], 1e-3);
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.99f64.powi(t as i32 + 1));
            expect -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            assert!((w[0] - expect).abs() < 1e-12);
        }
        // first Adam step moves by ~lr in the gradient's sign direction
        let mut slot = SlotState::default();
        let mut w = [0.0];
        slot.update(&kind, &mut w, &[0.3], 1e-3);
        assert!((w[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn schedule_is_piecewise_and_non_increasing() {
        let cfg = TrainConfig::supervised();
        assert_eq!(cfg.lr_at(0), 0.002);
        assert_eq!(cfg.lr_at(49), 0.002);
        assert!((cfg.lr_at(50) - 0.0004).abs() < 1e-16);
        assert!((cfg.lr_at(100) - 0.00008).abs() < 1e-17);
        assert!((cfg.lr_at(149) - 0.000016).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for e in 0..150 {
            assert!(cfg.lr_at(e) <= prev);
            prev = cfg.lr_at(e);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::supervised();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::supervised();
        cfg.lambda = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::supervised();
        cfg.optimizer = OptimizerKind::SGD_DEFAULT.with_lr(-1.0);
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::semi_supervised().validate().is_ok());
    }

    #[test]
    fn optimizer_strings() {
        for k in [OptimizerKind::SGD_DEFAULT, OptimizerKind::ADAM_DEFAULT] {
            assert_eq!(k.to_string().parse::<OptimizerKind>().unwrap(), k);
        }
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::ADAM_DEFAULT);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn sampler_covers_each_pass() {
        let mut s = BatchSampler::new(10, rng::stream(1, "t"));
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(BatchSampler::new(3, rng::stream(1, "t")).next_batch(5).len(), 3);
    }

    #[test]
    fn zero_beta_freezes_decoder() {
        let ds = synth_blobs(2, 20, 3, 0.1, 1).unwrap();
        let mut cfg = small_config();
        cfg.beta = 0.0;
        let params = ModelParams::new(3, &[8], 4, 2, &mut rng::stream(1, rng::INIT));
        let mut t = Trainer::new(params.clone(), cfg).unwrap();
        let y = ds.labels().unwrap()[..10].to_vec();
        let x = ds.x.row_block(0, 10);
        let x_t = ds.x.row_block(10, 30);
        t.supervised_step(&x, &y, &x_t, 0.02).unwrap();
        assert_eq!(t.params.decoder, params.decoder);
        assert_ne!(t.params.encoder, params.encoder);
    }

    #[test]
    fn semi_with_zero_beta2_equals_supervised() {
        let ds = synth_blobs(3, 20, 3, 0.2, 2).unwrap();
        let mut cfg = small_config();
        cfg.beta2 = 0.0;
        cfg.beta1 = cfg.beta;
        let params = ModelParams::new(3, &[8], 4, 3, &mut rng::stream(2, rng::INIT));
        let y = ds.labels().unwrap()[..15].to_vec();
        let x_l = ds.x.select_rows(&(0..15).map(|i| i * 4).collect::<Vec<_>>());
        let x_u = ds.x.row_block(20, 50);
        let mut a = Trainer::new(params.clone(), cfg.clone()).unwrap();
        let mut b = Trainer::new(params, cfg).unwrap();
        let la = a.supervised_step(&x_l, &y, &x_u, 0.01).unwrap();
        let lb = b
            .semi_supervised_step(&x_l, &y, &x_u, &[1.0 / 3.0; 3], 0.01)
            .unwrap();
        assert!((la.total - lb.total).abs() <= 1e-12);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn confident_correct_predictions_approach_prior_entropy() {
        // Each prediction is near one-hot and the batch covers both classes
        // evenly, so conditional entropy ~ 0 and the CE term ~ ln 2.
        let probs = Mat::from_rows(&[[0.999, 0.001], [0.001, 0.999], [0.999, 0.001], [0.001, 0.999]]);
        let (c, _) = confidence_loss_grad(&probs, &[0.5, 0.5]).unwrap();
        let entropy_row = -(0.999f64 * 0.999f64.ln() + 0.001 * 0.001f64.ln());
        assert!((c - (entropy_row + std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((c - std::f64::consts::LN_2).abs() < 0.01);
    }

    #[test]
    fn uniform_predictions_give_positive_loss_and_gradient() {
        let ds = synth_blobs(2, 5, 3, 0.1, 4).unwrap();
        let mut params = ModelParams::new(3, &[6], 4, 2, &mut rng::stream(4, rng::INIT));
        params.classifier.layers[0].weight = Mat::zeros(2, 4);
        let (losses, grads) = objective_and_grads(
            &params,
            &KernelSpec::default(),
            &KernelSpec::default(),
            0.01,
            ObjectiveWeights { ae: 0.0, conf: 0.0 },
            &ds.x,
            &one_hot(ds.labels().unwrap(), 2),
            &ds.x,
            None,
            false,
        )
        .unwrap();
        assert!(losses.cmmd > 1e-3);
        assert!(grads.classifier.sq_norm() > 0.0);
    }

    #[test]
    fn evaluate_ties_and_perfect() {
        let ds = synth_blobs(2, 10, 2, 0.1, 5).unwrap();
        let mut p = ModelParams::identity_encoder(2, 2, &mut rng::stream(0, rng::INIT));
        p.classifier.layers[0].weight = Mat::zeros(2, 2);
        // uniform rows, ties -> class 0, balanced -> error exactly 1/2
        assert_eq!(evaluate(&p, &ds).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_matches_loop_oracle() {
        let ds = synth_blobs(3, 15, 4, 0.3, 6).unwrap();
        let p = ModelParams::new(4, &[5], 3, 3, &mut rng::stream(6, rng::INIT));
        let mut wrong = 0;
        for i in 0..ds.len() {
            let probs = p.predict(&ds.x.row_block(i, i + 1)).unwrap();
            let row = probs.row(0);
            let mut best = 0;
            for c in 1..3 {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best != ds.labels().unwrap()[i] {
                wrong += 1;
            }
        }
        assert_eq!(evaluate(&p, &ds).unwrap(), wrong as f64 / ds.len() as f64);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = synth_blobs(2, 20, 2, 0.1, 7).unwrap();
        let mut cfg = small_config();
        cfg.epochs = 0;
        let out = train(&ds, &ds, &cfg, Mode::Supervised, |_| {}).unwrap();
        assert!(out.report.epochs.is_empty());
        let init = ModelParams::new(2, &[8], 4, 2, &mut rng::stream(cfg.seed, rng::INIT));
        assert_eq!(out.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth_blobs(2, 30, 2, 0.2, 8).unwrap();
        let cfg = small_config();
        let a = train(&ds, &ds, &cfg, Mode::Supervised, |_| {}).unwrap();
        let b = train(&ds, &ds, &cfg, Mode::Supervised, |_| {}).unwrap();
        assert_eq!(a.report.to_text(), b.report.to_text());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn semi_requires_label_count() {
        let ds = synth_blobs(2, 30, 2, 0.2, 8).unwrap();
        let cfg = TrainConfig {
            n_labeled: None,
            ..small_config()
        };
        assert!(train(&ds, &ds, &cfg, Mode::SemiSupervised, |_| {}).is_err());
    }

    #[test]
    fn decoder_overfits_tiny_dataset() {
        // 1-D toy data, an auto-encoder alone driven to near-zero MSE
        let x = Mat::from_rows(&[[0.1], [0.35], [0.6], [0.85]]);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams::new(1, &[16], 4, 2, &mut r);
        let cfg = TrainConfig {
            beta: 1.0,
            optimizer: OptimizerKind::Adam {
                lr: 1e-2,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
            },
            ..TrainConfig::semi_supervised()
        };
        let mut t = Trainer::new(params, cfg).unwrap();
        let mut loss = f64::INFINITY;
        for _ in 0..3000 {
            loss = t.ae_step(&x, 1e-2).unwrap();
        }
        assert!(loss <= 1e-4, "loss {loss}");
        let recon = t.params.decode(&t.params.encode(&x).unwrap()).unwrap();
        assert!(recon.max_abs_diff(&x) < 0.02);
    }
}
