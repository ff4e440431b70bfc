//! Overlap metrics and cross-validation report tables.
//!
//! Empty denominators follow fixed conventions so every metric is total:
//! DSC is 1 when both masks are empty, PPV is 1 when nothing is predicted,
//! sensitivity is 1 when the reference is empty.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::volume::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dsc(&self) -> f64 {
        dsc(self)
    }

    pub fn ppv(&self) -> f64 {
        ppv(self)
    }

    pub fn sensitivity(&self) -> f64 {
        sensitivity(self)
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.extents() != gt.extents() {
        return Err(Error::shape(
            "prediction vs reference mask",
            &gt.extents(),
            &pred.extents(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn dsc(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn ppv(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanMetrics {
    pub id: String,
    pub dsc: f64,
    pub ppv: f64,
    pub sensitivity: f64,
}

impl ScanMetrics {
    pub fn from_counts(id: impl Into<String>, c: &ConfusionCounts) -> Self {
        Self {
            id: id.into(),
            dsc: c.dsc(),
            ppv: c.ppv(),
            sensitivity: c.sensitivity(),
        }
    }

    pub fn evaluate(id: impl Into<String>, pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        Ok(Self::from_counts(id, &confusion_counts(pred, gt)?))
    }
}

/// Mean, population standard deviation, max and min of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: libm::sqrt(var),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub label: String,
    pub scans: Vec<ScanMetrics>,
    pub dsc: Aggregate,
    pub ppv: Aggregate,
    pub sensitivity: Aggregate,
}

pub fn report(label: impl Into<String>, scans: Vec<ScanMetrics>) -> Result<FoldReport> {
    if scans.is_empty() {
        return Err(Error::invalid("a report needs at least one scan"));
    }
    let col = |f: fn(&ScanMetrics) -> f64| scans.iter().map(f).collect::<Vec<_>>();
    Ok(FoldReport {
        label: label.into(),
        dsc: Aggregate::of(&col(|s| s.dsc))?,
        ppv: Aggregate::of(&col(|s| s.ppv))?,
        sensitivity: Aggregate::of(&col(|s| s.sensitivity))?,
        scans,
    })
}

/// Pools the scans of several reports into one.
pub fn pool(label: impl Into<String>, reports: &[FoldReport]) -> Result<FoldReport> {
    report(label, reports.iter().flat_map(|r| r.scans.iter().cloned()).collect())
}

fn pm(a: &Aggregate) -> String {
    format!("{:.2} ± {:.2}", a.mean, a.std)
}

/// Plain-text table with one row per report:
/// `Method | DSC Avg | DSC Max | DSC Min | PPV | SENS`.
pub fn render_table(reports: &[&FoldReport]) -> String {
    let header = ["Method", "DSC Avg", "DSC Max", "DSC Min", "PPV", "SENS"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                pm(&r.dsc),
                format!("{:.2}", r.dsc.max),
                format!("{:.2}", r.dsc.min),
                pm(&r.ppv),
                pm(&r.sensitivity),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            s.push_str(c);
            s.extend(core::iter::repeat_n(' ', pad));
        }
        let _ = writeln!(out, "{}", s.trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    fn random_mask(rng: &mut ChaCha8Rng, e: [usize; 3]) -> BinaryMask {
        BinaryMask::from_fn(e, [1.0; 3], |_| rng.gen_bool(0.3)).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let c = counts(50, 10, 10, 0);
        assert!((c.dsc() - 100.0 / 120.0).abs() < 1e-12);
        assert!((c.ppv() - 5.0 / 6.0).abs() < 1e-12);
        assert!((c.sensitivity() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let both = counts(0, 0, 0, 27);
        assert_eq!((both.dsc(), both.ppv(), both.sensitivity()), (1.0, 1.0, 1.0));
        let spurious = counts(0, 3, 0, 24);
        assert_eq!(
            (spurious.dsc(), spurious.ppv(), spurious.sensitivity()),
            (0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn identity_and_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_mask(&mut rng, [6, 6, 6]);
        let c = confusion_counts(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv = BinaryMask::from_fn([6, 6, 6], [1.0; 3], |p| !gt.get(p)).unwrap();
        let c = confusion_counts(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert_eq!(c.total(), 216);
    }

    #[test]
    fn symmetry_relations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_mask(&mut rng, [6, 6, 6]);
            let b = random_mask(&mut rng, [6, 6, 6]);
            let ab = confusion_counts(&a, &b).unwrap();
            let ba = confusion_counts(&b, &a).unwrap();
            assert_eq!(ab.dsc(), ba.dsc());
            assert_eq!(ab.ppv(), ba.sensitivity());
        }
    }

    #[test]
    fn mismatched_extents_rejected() {
        let a = BinaryMask::zeros([4, 4, 4], [1.0; 3]).unwrap();
        let b = BinaryMask::zeros([4, 4, 2], [1.0; 3]).unwrap();
        assert!(confusion_counts(&a, &b).is_err());
    }

    fn scan(id: &str, dsc: f64) -> ScanMetrics {
        ScanMetrics {
            id: id.into(),
            dsc,
            ppv: dsc,
            sensitivity: dsc,
        }
    }

    #[test]
    fn report_aggregates() {
        let r = report("one", vec![scan("a", 0.9)]).unwrap();
        assert_eq!((r.dsc.mean, r.dsc.std, r.dsc.max, r.dsc.min), (0.9, 0.0, 0.9, 0.9));
        let r = report("two", vec![scan("a", 0.8), scan("b", 0.9)]).unwrap();
        assert!((r.dsc.mean - 0.85).abs() < 1e-12);
        assert!((r.dsc.std - 0.05).abs() < 1e-12);
        assert_eq!((r.dsc.max, r.dsc.min), (0.9, 0.8));
        assert!(report("none", Vec::new()).is_err());
    }

    #[test]
    fn table_layout() {
        let r = report("two", vec![scan("a", 0.8), scan("b", 0.9)]).unwrap();
        let t = render_table(&[&r]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Method"));
        assert!(lines[0].contains("DSC Avg") && lines[0].ends_with("SENS"));
        assert!(lines[2].contains("0.85 ± 0.05"));
        assert!(lines[2].contains("0.90") && lines[2].contains("0.80"));
    }
}
