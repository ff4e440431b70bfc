//! Training loop: augmented crops, the multi-part Dice objective, Adam,
//! per-epoch validation and best-model tracking.
//!
//! One epoch is one pass over the training scans, drawing a single random
//! crop per scan. Everything that influences the run (parameters, batch norm
//! statistics, optimizer moments, generator position, history and best
//! snapshot) lives in [`TrainState`], so a run restored from a saved state
//! continues exactly as if it had never stopped.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentConfig};
use crate::error::{Error, Result};
use crate::infer::{segment, DEFAULT_OVERLAP, DEFAULT_WINDOW};
use crate::loss::{loss_and_grad, DEFAULT_EPS};
use crate::metrics::confusion_counts;
use crate::model::{HierNet, ModelConfig};
use crate::nn::Tensor;
use crate::optim::Adam;
use crate::preprocess::ScanRecord;
use crate::volume::{Axis, BinaryMask};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub augment: AugmentConfig,
    /// Sliding window used for validation.
    pub window: [usize; 3],
    pub overlap: f64,
    pub eps: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale schedule. The crop depth is 64 so full-width presets
    /// (axial divisor 32) accept it.
    pub fn full() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            epochs: 3000,
            augment: AugmentConfig::new([128, 128, 64]),
            window: [DEFAULT_WINDOW[0], DEFAULT_WINDOW[1], 64],
            overlap: DEFAULT_OVERLAP,
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }

    /// Desk-scale schedule for 64×64×48 scans.
    pub fn desk() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 1,
            epochs: 300,
            augment: AugmentConfig::new([64, 64, 48]),
            window: [64, 64, 48],
            overlap: DEFAULT_OVERLAP,
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.augment.fg_bias) {
            return bad(format!("fg_bias must lie in [0, 1], got {}", self.augment.fg_bias));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap must lie in [0, 1), got {}", self.overlap));
        }
        if !(self.eps > 0.0) {
            return bad(format!("loss epsilon must be positive, got {}", self.eps));
        }
        let div = model.required_divisor();
        for (what, size) in [("crop", self.augment.crop), ("window", self.window)] {
            for axis in Axis::ALL {
                let a = axis.index();
                if size[a] == 0 || size[a] % div[a] != 0 {
                    return bad(format!(
                        "{what} {size:?} is not divisible by the model stride {div:?} on axis {axis}"
                    ));
                }
            }
        }
        if self.augment.rotate && self.augment.crop[0] != self.augment.crop[1] {
            return bad(format!(
                "quarter turns in the (x, y) plane need a square crop, got {:?}",
                self.augment.crop
            ));
        }
        Ok(())
    }
}

/// Position of a ChaCha generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dsc: f64,
    /// Seconds since the run started, as reported by the observer.
    pub wall_clock: f64,
    /// Generator position at the end of the epoch.
    pub rng: RngState,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn val_dsc(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_dsc).collect()
    }

    pub fn train_loss(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

/// 1-based epoch with the highest validation DSC; ties go to the earliest.
pub fn select_epoch(history: &TrainingHistory) -> Result<usize> {
    best_index(&history.val_dsc()).map(|i| i + 1)
}

fn best_index(values: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("cannot select an epoch from an empty history"))
}

/// Parameters of the best epoch so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub val_dsc: f64,
    pub params: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: HierNet,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub history: TrainingHistory,
    pub best: Option<BestModel>,
}

impl TrainState {
    pub fn new(model: HierNet, cfg: &TrainConfig) -> Self {
        Self {
            model,
            optimizer: Adam::new(cfg.lr),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            history: TrainingHistory::default(),
            best: None,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// The model with the best-epoch parameters loaded (or the current one
    /// when no epoch has run).
    pub fn best_model(&self) -> Result<HierNet> {
        let mut m = self.model.clone();
        if let Some(b) = &self.best {
            m.restore(&b.params)?;
        }
        Ok(m)
    }
}

/// Hooks called by [`train`]. The core crate has no clock or file system, so
/// timing and persistence are delegated here.
pub trait TrainObserver {
    fn elapsed_seconds(&mut self) -> f64 {
        0.0
    }

    /// Called after every epoch; `improved` is true when this epoch set a
    /// new best validation DSC.
    fn on_epoch(&mut self, _state: &TrainState, _record: &EpochRecord, _improved: bool) -> Result<()> {
        Ok(())
    }

    /// Ends the run after the current epoch when true.
    fn stop(&mut self, _record: &EpochRecord) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

fn require_mask(s: &ScanRecord) -> Result<&BinaryMask> {
    s.mask
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("scan {} has no reference mask", s.id)))
}

/// Mean DSC of the binarized sliding-window prediction over `scans`.
pub fn validation_dsc(model: &HierNet, scans: &[ScanRecord], window: [usize; 3], overlap: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in scans {
        let pred = segment(model, &s.image, window, overlap)?;
        total += confusion_counts(&pred, require_mask(s)?)?.dsc();
    }
    Ok(total / scans.len() as f64)
}

/// Runs epochs until `cfg.epochs` have completed in total.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    train_scans: &[ScanRecord],
    val_scans: &[ScanRecord],
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    cfg.validate(state.model.config())?;
    if train_scans.is_empty() || val_scans.is_empty() {
        return Err(Error::invalid(
            "training needs at least one training and one validation scan",
        ));
    }
    for s in train_scans.iter().chain(val_scans) {
        require_mask(s)?;
    }
    state.optimizer.lr = cfg.lr;
    while state.epochs_done() < cfg.epochs {
        let epoch = state.epochs_done() + 1;
        let train_loss = run_epoch(state, cfg, train_scans, epoch)?;
        let val_dsc = validation_dsc(&state.model, val_scans, cfg.window, cfg.overlap)?;
        let improved = state.best.as_ref().is_none_or(|b| val_dsc > b.val_dsc);
        if improved {
            state.best = Some(BestModel {
                epoch,
                val_dsc,
                params: state.model.snapshot(),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_dsc,
            wall_clock: observer.elapsed_seconds(),
            rng: RngState::capture(&state.rng),
        };
        state.history.records.push(record.clone());
        observer.on_epoch(state, &record, improved)?;
        if observer.stop(&record) {
            break;
        }
    }
    Ok(())
}

fn run_epoch(state: &mut TrainState, cfg: &TrainConfig, scans: &[ScanRecord], epoch: usize) -> Result<f64> {
    let mut order: Vec<usize> = (0..scans.len()).collect();
    order.shuffle(&mut state.rng);
    let mut weighted = 0.0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut images = Vec::with_capacity(chunk.len());
        let mut masks = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let s = &scans[i];
            let (img, m) = augment(&s.image, require_mask(s)?, &cfg.augment, &mut state.rng)?;
            images.push(img);
            masks.push(m);
        }
        let x = Tensor::stack(&images)?;
        state.model.zero_grad();
        let out = state.model.forward_train(x)?;
        let (loss, grad) = loss_and_grad(&out, &masks, cfg.eps)?;
        if !loss.loss.is_finite() || !out.all_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: b + 1,
                scans: chunk.iter().map(|&i| scans[i].id.clone()).collect(),
            });
        }
        state.model.backward(&grad);
        let params = state.model.named_params_mut();
        state.optimizer.step(params.into_iter().map(|(_, p)| p))?;
        weighted += loss.loss * chunk.len() as f64;
    }
    Ok(weighted / scans.len() as f64)
}
