//! The work behind each command-line verb. Every command writes the
//! resolved config into its output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hierseg_core::crossval::{crossval, CrossvalResult};
use hierseg_core::folds::make_folds;
use hierseg_core::infer::segment;
use hierseg_core::metrics::{render_table, ScanMetrics};
use hierseg_core::model::{HierNet, Scale};
use hierseg_core::phantom::make_phantom;
use hierseg_core::preprocess::ScanRecord;
use hierseg_core::train::{train, EpochRecord, TrainObserver, TrainState};
use hierseg_core::BinaryMask;
use serde_json::json;

use crate::checkpoint;
use crate::config::{RunConfig, TrainMode};
use crate::error::{Error, Result};
use crate::nifti_io::{load_dir, read_volume, save_scan, write_mask, IMAGE_SUFFIX};
use crate::pipeline::{self, PreprocessOutcome};
use crate::{montage, report};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const HISTORY_FILE: &str = "history.csv";
pub const POOLED_FILE: &str = "pooled.csv";

/// Scans from `data.dir`, or phantoms generated from the `phantom` section.
pub fn load_scans(cfg: &RunConfig) -> Result<Vec<ScanRecord>> {
    match cfg.data_dir() {
        Some(dir) => {
            let scans = load_dir(&dir)?;
            if scans.is_empty() {
                return Err(Error::format(&dir, "no *_image.nii[.gz] files found"));
            }
            Ok(scans)
        }
        None => phantoms(cfg),
    }
}

pub fn phantoms(cfg: &RunConfig) -> Result<Vec<ScanRecord>> {
    let p = &cfg.phantom;
    (0..p.n as u64)
        .map(|i| Ok(make_phantom(cfg.seed.wrapping_add(i), p.extents, p.blobs)?))
        .collect()
}

pub fn cmd_phantom(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.echo(out)?;
    let mut files = Vec::new();
    for s in phantoms(cfg)? {
        files.extend(save_scan(out, &s)?);
    }
    Ok(files)
}

/// Fails with [`Error::Partial`] after writing the manifest when any scan
/// could not be processed.
pub fn cmd_preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<PreprocessOutcome> {
    cfg.echo(out)?;
    let outcome = pipeline::run(cfg, input, out)?;
    if !outcome.failed.is_empty() {
        return Err(Error::Partial {
            failed: outcome.failed.len(),
            total: outcome.failed.len()
                + outcome
                    .written
                    .iter()
                    .filter(|p| p.to_string_lossy().ends_with(IMAGE_SUFFIX))
                    .count(),
        });
    }
    Ok(outcome)
}

/// Saves `last` after every epoch and `best` whenever validation improves.
struct CheckpointObserver {
    dir: PathBuf,
    scale: Scale,
    config: String,
    start: Instant,
    offset: f64,
    label: String,
}

impl TrainObserver for CheckpointObserver {
    fn elapsed_seconds(&mut self) -> f64 {
        self.offset + self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, state: &TrainState, r: &EpochRecord, improved: bool) -> hierseg_core::Result<()> {
        log::info!(
            "{}epoch {} loss {:.4} val_dsc {:.4}{}",
            self.label,
            r.epoch,
            r.train_loss,
            r.val_dsc,
            if improved { " *" } else { "" }
        );
        let save = |name: &str| {
            checkpoint::save(&self.dir.join(name), state, self.scale, &self.config)
                .map_err(|e| hierseg_core::Error::Observer(e.to_string()))
        };
        save(LAST_CHECKPOINT)?;
        if improved {
            save(BEST_CHECKPOINT)?;
        }
        Ok(())
    }
}

/// Logs progress only.
struct LogObserver {
    label: String,
    start: Instant,
}

impl TrainObserver for LogObserver {
    fn elapsed_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, _: &TrainState, r: &EpochRecord, improved: bool) -> hierseg_core::Result<()> {
        log::info!(
            "{}epoch {} loss {:.4} val_dsc {:.4}{}",
            self.label,
            r.epoch,
            r.train_loss,
            r.val_dsc,
            if improved { " *" } else { "" }
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub best_checkpoint: PathBuf,
}

/// Trains one model. `resume` continues from a saved state; the model preset
/// in the checkpoint must match the config.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.echo(out)?;
    let model_cfg = cfg.model_config()?;
    let tcfg = cfg.train_config();
    let scans = load_scans(cfg)?;
    let (train_scans, val_scans) = match cfg.train_mode()? {
        TrainMode::All => (scans.clone(), scans),
        TrainMode::Fold => {
            let ids: Vec<String> = scans.iter().map(|s| s.id.clone()).collect();
            let plan = make_folds(&ids, cfg.crossval.k, cfg.crossval.val_fraction, cfg.seed)?;
            if cfg.train.fold >= cfg.crossval.k {
                return Err(Error::Config(format!(
                    "train.fold {} is not below crossval.k {}",
                    cfg.train.fold, cfg.crossval.k
                )));
            }
            let pick = |ids: Vec<String>| -> Vec<ScanRecord> {
                scans.iter().filter(|s| ids.contains(&s.id)).cloned().collect()
            };
            (pick(plan.train_ids(cfg.train.fold)), pick(plan.val_ids(cfg.train.fold)))
        }
    };
    let mut state = match resume {
        Some(p) => {
            let ck = checkpoint::load(p)?;
            if ck.model_config() != &model_cfg {
                return Err(Error::Config(format!(
                    "checkpoint {} holds a {} model, the config asks for {}",
                    p.display(),
                    ck.model_config().variant,
                    model_cfg.variant
                )));
            }
            ck.state
        }
        None => TrainState::new(HierNet::new(model_cfg, cfg.seed)?, &tcfg),
    };
    let mut obs = CheckpointObserver {
        dir: out.to_path_buf(),
        scale: cfg.scale()?,
        config: cfg.to_flat_toml(),
        start: Instant::now(),
        offset: state.history.records.last().map_or(0.0, |r| r.wall_clock),
        label: String::new(),
    };
    let result = train(&mut state, &tcfg, &train_scans, &val_scans, &mut obs);
    report::write_history(&out.join(HISTORY_FILE), &state.history)?;
    result?;
    let best = state
        .best
        .as_ref()
        .ok_or_else(|| Error::Config("train.epochs is 0; nothing was trained".into()))?;
    Ok(TrainSummary {
        epochs: state.history.len(),
        best_epoch: best.epoch,
        best_val_dsc: best.val_dsc,
        best_checkpoint: out.join(BEST_CHECKPOINT),
    })
}

pub fn cmd_crossval(cfg: &RunConfig, out: &Path) -> Result<CrossvalResult> {
    cfg.echo(out)?;
    let scans = load_scans(cfg)?;
    let start = Instant::now();
    let mut factory = |fold: usize| -> Box<dyn TrainObserver> {
        Box::new(LogObserver {
            label: format!("fold {fold}: "),
            start,
        })
    };
    let result = crossval(&cfg.model_config()?, &scans, &cfg.crossval_config(), Some(&mut factory))?;
    for f in &result.folds {
        let dir = out.join(format!("fold-{}", f.fold));
        report::write_history(&dir.join(HISTORY_FILE), &f.history)?;
        let plan = json!({
            "fold": f.fold,
            "selected_epoch": f.selected_epoch,
            "train": f.train_ids,
            "val": f.val_ids,
            "test": result.plan.test_ids(f.fold),
        });
        let p = dir.join("split.json");
        fs::write(
            &p,
            serde_json::to_string_pretty(&plan).expect("split serializes") + "\n",
        )
        .map_err(|e| Error::io(&p, e))?;
    }
    let mut reports: Vec<_> = result.folds.iter().map(|f| &f.report).collect();
    report::write_scans(&out.join("scans.csv"), &reports)?;
    report::write_summary(&out.join(POOLED_FILE), &[&result.pooled])?;
    reports.push(&result.pooled);
    report::write_summary(&out.join("summary.csv"), &reports)?;
    let table = render_table(&reports);
    let p = out.join("table.txt");
    fs::write(&p, &table).map_err(|e| Error::io(&p, e))?;
    Ok(result)
}

/// Scan id from a file name such as `case_image.nii.gz` or `case.nii`.
pub fn scan_id(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".gz").unwrap_or(&name);
    let stem = stem.strip_suffix(".nii").unwrap_or(stem);
    stem.strip_suffix("_image").unwrap_or(stem).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub mask: PathBuf,
    pub montage: Option<PathBuf>,
}

/// Segments one scan with the best-epoch parameters of a checkpoint.
pub fn cmd_infer(cfg: &RunConfig, ckpt: &Path, image: &Path, out: &Path, montage_png: bool) -> Result<InferOutput> {
    cfg.echo(out)?;
    let ck = checkpoint::load(ckpt)?;
    let model = ck.state.best_model()?;
    let id = scan_id(image);
    let scan = crate::nifti_io::load_scan(id.clone(), image, None)?;
    let pred = segment(&model, &scan.image, cfg.infer.window, cfg.infer.overlap)?;
    let mask = out.join(format!("{id}_pred.nii.gz"));
    write_mask(&mask, &pred, scan.orientation)?;
    let montage = if montage_png || cfg.infer.montage {
        let p = out.join(format!("{id}_montage.png"));
        montage::write(&p, &scan.image, Some(&pred), 16)?;
        Some(p)
    } else {
        None
    };
    Ok(InferOutput { mask, montage })
}

fn read_mask(path: &Path) -> Result<(BinaryMask, String)> {
    let raw = read_volume(path)?;
    let bits = raw.data.iter().map(|&v| u8::from(v > 0.5)).collect();
    Ok((
        BinaryMask::new(raw.extents, raw.spacing, bits)?,
        raw.orientation.to_string(),
    ))
}

/// DSC, PPV and sensitivity of a predicted mask against a reference.
pub fn cmd_eval(pred: &Path, gt: &Path, out: Option<&Path>) -> Result<ScanMetrics> {
    let (p, po) = read_mask(pred)?;
    let (g, go) = read_mask(gt)?;
    let spacing_differs = p
        .spacing()
        .iter()
        .zip(g.spacing())
        .any(|(a, b)| (a - b).abs() > 1e-4 * b.abs().max(1.0));
    if p.extents() != g.extents() || po != go || spacing_differs {
        return Err(Error::format(
            pred,
            format!(
                "geometry {:?} {po} {:?} does not match reference {:?} {go} {:?}",
                p.extents(),
                p.spacing(),
                g.extents(),
                g.spacing()
            ),
        ));
    }
    let m = ScanMetrics::evaluate(scan_id(gt), &p, &g)?;
    if let Some(dir) = out {
        let r = hierseg_core::metrics::report(m.id.clone(), vec![m.clone()])?;
        report::write_scans(&dir.join("metrics.csv"), &[&r])?;
    }
    Ok(m)
}
