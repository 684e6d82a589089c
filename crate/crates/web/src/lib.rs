//! Browser bindings for three interactive views on synthetic blobs: the
//! H-matrix heat map, same/different-class kernel histograms, and a small
//! KLN trained step by step.
//!
//! [`Session`] holds the logic and is usable natively; [`Demo`] is the thin
//! JavaScript-facing wrapper.

use kln::data::{synth_blobs_split, Dataset};
use kln::diagnostics::{h_heatmap, kernel_histogram, off_diagonal_cv, pgm_bytes, BatchMode, Features};
use kln::kernels::{KernelSpec, DEFAULT_BANDWIDTHS};
use kln::network::ModelParams;
use kln::rng;
use kln::training::{evaluate, BatchSampler, OptimizerKind, TrainConfig, Trainer};
use wasm_bindgen::prelude::*;

pub const CLASSES: usize = 4;
pub const DIM: usize = 32;
pub const TRAIN_PER_CLASS: usize = 100;
pub const TEST_PER_CLASS: usize = 50;
pub const HEATMAP_BATCH: usize = 40;
pub const HISTOGRAM_PAIRS: usize = 2000;

pub struct HeatmapData {
    /// Row-major 8-bit grey levels, `size * size`.
    pub pixels: Vec<u8>,
    pub size: usize,
    pub offdiag_cv: f64,
}

pub struct HistogramData {
    pub same: Vec<u32>,
    pub diff: Vec<u32>,
    pub separation: f64,
}

pub struct Session {
    train: Dataset,
    test: Dataset,
    trainer: Trainer,
    sampler_s: BatchSampler,
    sampler_t: BatchSampler,
    steps: usize,
    seed: u64,
    last_cmmd: f64,
}

fn scaled_kernel(scale: f64) -> kln::Result<KernelSpec> {
    let bw: Vec<f64> = DEFAULT_BANDWIDTHS.iter().map(|b| b * scale).collect();
    KernelSpec::gaussian(&bw)
}

impl Session {
    pub fn new(seed: u64, spread: f64) -> kln::Result<Self> {
        let (train, test) = synth_blobs_split(CLASSES, TRAIN_PER_CLASS, TEST_PER_CLASS, DIM, spread, seed)?;
        let config = TrainConfig {
            optimizer: OptimizerKind::Adam {
                lr: 3e-3,
                beta1: 0.9,
                beta2: 0.99,
                eps: 1e-8,
            },
            lr_schedule: Vec::new(),
            hidden: vec![64],
            latent_dim: 16,
            seed,
            ..TrainConfig::supervised()
        };
        let params = ModelParams::new(
            DIM,
            &config.hidden,
            config.latent_dim,
            CLASSES,
            &mut rng::stream(seed, rng::INIT),
        );
        Ok(Session {
            sampler_s: BatchSampler::new(train.len(), rng::stream(seed, rng::SHUFFLE_S)),
            sampler_t: BatchSampler::new(train.len(), rng::stream(seed, rng::SHUFFLE_T)),
            trainer: Trainer::new(params, config)?,
            train,
            test,
            steps: 0,
            seed,
            last_cmmd: f64::NAN,
        })
    }

    /// Runs `n` supervised steps; returns the CMMD of the last one.
    pub fn train_steps(&mut self, n: usize) -> kln::Result<f64> {
        let bs = self.trainer.config.batch_size;
        let labels = self.train.labels()?.to_vec();
        for _ in 0..n {
            let is = self.sampler_s.next_batch(bs);
            let it = self.sampler_t.next_batch(bs);
            let ys: Vec<usize> = is.iter().map(|&i| labels[i]).collect();
            let lr = self.trainer.config.optimizer.base_lr();
            let l = self.trainer.supervised_step(
                &self.train.x.select_rows(&is),
                &ys,
                &self.train.x.select_rows(&it),
                lr,
            )?;
            self.last_cmmd = l.cmmd;
            self.steps += 1;
        }
        Ok(self.last_cmmd)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn test_error(&self) -> kln::Result<f64> {
        evaluate(&self.trainer.params, &self.test)
    }

    fn features(&self, latent: bool) -> Features<'_> {
        if latent {
            Features::Latent(&self.trainer.params)
        } else {
            Features::Raw
        }
    }

    pub fn heatmap(&self, latent: bool, single_class: bool, bandwidth_scale: f64) -> kln::Result<HeatmapData> {
        let mode = if single_class {
            BatchMode::SingleClass(None)
        } else {
            BatchMode::Mixed
        };
        let hm = h_heatmap(
            &self.test,
            &scaled_kernel(bandwidth_scale)?,
            self.features(latent),
            mode,
            HEATMAP_BATCH,
            self.trainer.config.lambda,
            self.seed,
        )?;
        let pgm = pgm_bytes(&hm.h);
        let size = hm.h.rows();
        Ok(HeatmapData {
            pixels: pgm[pgm.len() - size * size..].to_vec(),
            size,
            offdiag_cv: off_diagonal_cv(&hm.h),
        })
    }

    pub fn histogram(&self, latent: bool, bins: usize, bandwidth_scale: f64) -> kln::Result<HistogramData> {
        let h = kernel_histogram(
            &self.test,
            &scaled_kernel(bandwidth_scale)?,
            self.features(latent),
            HISTOGRAM_PAIRS,
            bins,
            self.seed,
        )?;
        Ok(HistogramData {
            same: h.same.iter().map(|&c| c as u32).collect(),
            diff: h.diff.iter().map(|&c| c as u32).collect(),
            separation: h.separation()?,
        })
    }
}

fn js(e: kln::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Heatmap(HeatmapData);

#[wasm_bindgen]
impl Heatmap {
    pub fn pixels(&self) -> Vec<u8> {
        self.0.pixels.clone()
    }

    pub fn size(&self) -> usize {
        self.0.size
    }

    pub fn offdiag_cv(&self) -> f64 {
        self.0.offdiag_cv
    }
}

#[wasm_bindgen]
pub struct Histogram(HistogramData);

#[wasm_bindgen]
impl Histogram {
    pub fn same(&self) -> Vec<u32> {
        self.0.same.clone()
    }

    pub fn diff(&self) -> Vec<u32> {
        self.0.diff.clone()
    }

    pub fn separation(&self) -> f64 {
        self.0.separation
    }
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, spread: f64) -> Result<Demo, JsError> {
        Session::new(seed as u64, spread).map(Demo).map_err(js)
    }

    pub fn train_steps(&mut self, n: u32) -> Result<f64, JsError> {
        self.0.train_steps(n as usize).map_err(js)
    }

    pub fn steps(&self) -> u32 {
        self.0.steps() as u32
    }

    pub fn test_error(&self) -> Result<f64, JsError> {
        self.0.test_error().map_err(js)
    }

    pub fn heatmap(&self, latent: bool, single_class: bool, bandwidth_scale: f64) -> Result<Heatmap, JsError> {
        self.0
            .heatmap(latent, single_class, bandwidth_scale)
            .map(Heatmap)
            .map_err(js)
    }

    pub fn histogram(&self, latent: bool, bins: u32, bandwidth_scale: f64) -> Result<Histogram, JsError> {
        self.0
            .histogram(latent, bins as usize, bandwidth_scale)
            .map(Histogram)
            .map_err(js)
    }
}
