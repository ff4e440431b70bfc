//! K-fold cross-validation: per fold, train on the training split, pick the
//! epoch with the best inner-validation DSC and score the held-out fold.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::folds::{make_folds, FoldPlan, DEFAULT_VAL_FRACTION};
use crate::infer::segment;
use crate::metrics::{pool, report, FoldReport, ScanMetrics};
use crate::model::{HierNet, ModelConfig};
use crate::preprocess::ScanRecord;
use crate::train::{select_epoch, train, NoopObserver, TrainConfig, TrainObserver, TrainState, TrainingHistory};

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalConfig {
    pub k: usize,
    pub val_fraction: f64,
    /// Drives the fold split, model initialisation and training streams.
    pub seed: u64,
    pub train: TrainConfig,
}

impl CrossvalConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            k: 4,
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: train.seed,
            train,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub selected_epoch: usize,
    pub history: TrainingHistory,
    /// Parameters of the selected epoch.
    pub model: HierNet,
    pub report: FoldReport,
}

#[derive(Debug, Clone)]
pub struct CrossvalResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub pooled: FoldReport,
}

/// Seed used for fold `f` (model weights and training stream).
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

pub type ObserverFactory<'a> = dyn FnMut(usize) -> Box<dyn TrainObserver> + 'a;

pub fn crossval(
    model_cfg: &ModelConfig,
    scans: &[ScanRecord],
    cfg: &CrossvalConfig,
    observers: Option<&mut ObserverFactory<'_>>,
) -> Result<CrossvalResult> {
    model_cfg.validate()?;
    cfg.train.validate(model_cfg)?;
    let by_id: BTreeMap<&str, &ScanRecord> = scans.iter().map(|s| (s.id.as_str(), s)).collect();
    let ids: Vec<String> = scans.iter().map(|s| s.id.clone()).collect();
    let plan = make_folds(&ids, cfg.k, cfg.val_fraction, cfg.seed)?;
    let pick = |ids: &[String]| -> Vec<ScanRecord> { ids.iter().map(|id| by_id[id.as_str()].clone()).collect() };

    let mut observers = observers;
    let mut folds = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let outcome = run_fold(model_cfg, &plan, cfg, fold, &pick, &mut observers).map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })?;
        folds.push(outcome);
    }
    let reports: Vec<FoldReport> = folds.iter().map(|f| f.report.clone()).collect();
    let pooled = pool(model_cfg.variant.as_str(), &reports)?;
    Ok(CrossvalResult { plan, folds, pooled })
}

fn run_fold(
    model_cfg: &ModelConfig,
    plan: &FoldPlan,
    cfg: &CrossvalConfig,
    fold: usize,
    pick: &dyn Fn(&[String]) -> Vec<ScanRecord>,
    observers: &mut Option<&mut ObserverFactory<'_>>,
) -> Result<FoldOutcome> {
    let train_ids = plan.train_ids(fold);
    let val_ids = plan.val_ids(fold);
    let seed = fold_seed(cfg.seed, fold);
    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    let mut state = TrainState::new(HierNet::new(model_cfg.clone(), seed)?, &tcfg);
    let mut obs: Box<dyn TrainObserver> = match observers.as_mut() {
        Some(f) => f(fold),
        None => Box::new(NoopObserver),
    };
    train(&mut state, &tcfg, &pick(&train_ids), &pick(&val_ids), obs.as_mut())?;
    let selected_epoch = select_epoch(&state.history)?;
    let model = state.best_model()?;
    let mut metrics = Vec::new();
    for s in pick(&plan.test_ids(fold)) {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("scan {} has no reference mask", s.id)))?;
        let pred = segment(&model, &s.image, tcfg.window, tcfg.overlap)?;
        metrics.push(ScanMetrics::evaluate(s.id.clone(), &pred, gt)?);
    }
    Ok(FoldOutcome {
        fold,
        train_ids,
        val_ids,
        selected_epoch,
        history: state.history,
        model,
        report: report(format!("fold-{fold}"), metrics)?,
    })
}
