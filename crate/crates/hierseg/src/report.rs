//! CSV exports of training histories and evaluation reports.

use std::fs;
use std::path::Path;

use hierseg_core::metrics::{FoldReport, ScanMetrics};
use hierseg_core::train::TrainingHistory;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    val_dsc: f64,
    wall_clock_s: f64,
}

#[derive(Serialize)]
struct ScanRow<'a> {
    group: &'a str,
    id: &'a str,
    dsc: f64,
    ppv: f64,
    sensitivity: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    label: &'a str,
    scans: usize,
    dsc_mean: f64,
    dsc_std: f64,
    dsc_max: f64,
    dsc_min: f64,
    ppv_mean: f64,
    ppv_std: f64,
    sens_mean: f64,
    sens_std: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv_err = |e: csv::Error| Error::format(path, e);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_history(path: &Path, h: &TrainingHistory) -> Result<()> {
    write_rows(
        path,
        h.records.iter().map(|r| HistoryRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_dsc: r.val_dsc,
            wall_clock_s: r.wall_clock,
        }),
    )
}

/// One row per scan of every report, tagged with the report label.
pub fn write_scans(path: &Path, reports: &[&FoldReport]) -> Result<()> {
    write_rows(
        path,
        reports.iter().flat_map(|r| {
            r.scans.iter().map(|s: &ScanMetrics| ScanRow {
                group: &r.label,
                id: &s.id,
                dsc: s.dsc,
                ppv: s.ppv,
                sensitivity: s.sensitivity,
            })
        }),
    )
}

/// One aggregate row per report.
pub fn write_summary(path: &Path, reports: &[&FoldReport]) -> Result<()> {
    write_rows(
        path,
        reports.iter().map(|r| SummaryRow {
            label: &r.label,
            scans: r.scans.len(),
            dsc_mean: r.dsc.mean,
            dsc_std: r.dsc.std,
            dsc_max: r.dsc.max,
            dsc_min: r.dsc.min,
            ppv_mean: r.ppv.mean,
            ppv_std: r.ppv.std,
            sens_mean: r.sensitivity.mean,
            sens_std: r.sensitivity.std,
        }),
    )
}
