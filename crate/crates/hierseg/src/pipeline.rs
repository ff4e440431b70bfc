//! The preprocessing chain applied to scans on disk, with a manifest that
//! records every step, its parameters and the hashes of the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use hierseg_core::preprocess::{
    normalize_minmax, reorient_ras, resample_isotropic, smooth_edge_preserving, standardize_intensity, ScanRecord,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Modality, RunConfig};
use crate::error::{Error, Result};
use crate::nifti_io::{discover, load_scan, save_scan};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub name: &'static str,
    pub params: Value,
}

/// Steps for a modality, in application order. CT skips smoothing and
/// intensity standardization.
pub fn plan(cfg: &RunConfig) -> Result<Vec<Step>> {
    let p = &cfg.preprocess;
    let mut steps = vec![
        Step {
            name: "reorient",
            params: json!({ "target": "RAS" }),
        },
        Step {
            name: "resample_isotropic",
            params: json!({ "spacing_mm": p.spacing_mm, "image": "trilinear", "mask": "nearest" }),
        },
    ];
    if cfg.modality()? == Modality::Mri {
        steps.push(Step {
            name: "smooth_edge_preserving",
            params: json!({ "sigma_spatial_voxels": p.sigma_spatial, "sigma_range_relative": p.sigma_range }),
        });
        steps.push(Step {
            name: "standardize_intensity",
            params: json!({ "p_low": p.p_low, "p_high": p.p_high }),
        });
    }
    steps.push(Step {
        name: "normalize_minmax",
        params: json!({}),
    });
    Ok(steps)
}

pub fn apply(cfg: &RunConfig, scan: &ScanRecord) -> Result<ScanRecord> {
    let p = &cfg.preprocess;
    let mut s = reorient_ras(scan)?;
    s = resample_isotropic(&s, p.spacing_mm)?;
    if cfg.modality()? == Modality::Mri {
        let (lo, hi) = s.image.min_max();
        let sigma_range = p.sigma_range * f64::from(hi - lo).max(f64::MIN_POSITIVE);
        s = smooth_edge_preserving(&s, p.sigma_spatial, sigma_range)?;
        s = standardize_intensity(&s, p.p_low, p.p_high)?;
    }
    Ok(normalize_minmax(&s)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ScanEntry {
    id: String,
    source: String,
    source_orientation: String,
    source_spacing: [f64; 3],
    extents: [usize; 3],
    outputs: Vec<OutputFile>,
}

#[derive(Debug, Serialize)]
struct Failure {
    source: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    modality: String,
    steps: Vec<Step>,
    scans: Vec<ScanEntry>,
    failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOutcome {
    pub written: Vec<PathBuf>,
    pub failed: Vec<String>,
    pub manifest: PathBuf,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Processes every scan in `input`, writing results and the manifest to
/// `out`. Failing scans are logged and listed in the manifest; the rest of
/// the batch continues.
pub fn run(cfg: &RunConfig, input: &Path, out: &Path) -> Result<PreprocessOutcome> {
    let steps = plan(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = Manifest {
        modality: cfg.preprocess.modality.to_ascii_lowercase(),
        steps,
        scans: Vec::new(),
        failures: Vec::new(),
    };
    let mut written = Vec::new();
    for f in discover(input)? {
        let result = load_scan(f.id.clone(), &f.image, f.mask.as_deref()).and_then(|s| {
            let processed = apply(cfg, &s)?;
            let files = save_scan(out, &processed)?;
            Ok((s, processed, files))
        });
        match result {
            Ok((src, processed, files)) => {
                let outputs = files
                    .iter()
                    .map(|p| {
                        Ok(OutputFile {
                            file: file_name(p),
                            sha256: sha256_file(p)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                manifest.scans.push(ScanEntry {
                    id: f.id.clone(),
                    source: file_name(&f.image),
                    source_orientation: src.orientation.to_string(),
                    source_spacing: src.image.spacing(),
                    extents: processed.image.extents(),
                    outputs,
                });
                written.extend(files);
            }
            Err(e) => {
                log::error!("{}: {e}", f.image.display());
                manifest.failures.push(Failure {
                    source: file_name(&f.image),
                    error: e.to_string(),
                });
            }
        }
    }
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(PreprocessOutcome {
        written,
        failed: manifest.failures.into_iter().map(|f| f.source).collect(),
        manifest: path,
    })
}
