//! Run configuration: defaults, a TOML file and `key=value` overrides,
//! applied in that order.
//!
//! Keys are flat and dotted (`train.lr`, `model.variant`). A file may use
//! dotted keys or the equivalent `[train]` tables. The resolved config is
//! echoed with [`RunConfig::to_flat_toml`], which [`RunConfig::from_toml`]
//! reads back unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hierseg_core::augment::AugmentConfig;
use hierseg_core::crossval::CrossvalConfig;
use hierseg_core::folds::DEFAULT_VAL_FRACTION;
use hierseg_core::infer::DEFAULT_OVERLAP;
use hierseg_core::loss::DEFAULT_EPS;
use hierseg_core::model::{ModelConfig, Scale, Variant};
use hierseg_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};

pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub crossval: CrossvalSection,
    pub preprocess: PreprocessSection,
    pub phantom: PhantomSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// standard, light, baseline-standard or baseline-light.
    pub variant: String,
    /// desk or full.
    pub scale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub crop: [usize; 3],
    pub flip: bool,
    pub rotate: bool,
    pub fg_bias: f64,
    pub eps: f64,
    /// `fold`: train on the training split of `train.fold`;
    /// `all`: train and validate on every scan.
    pub mode: String,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub window: [usize; 3],
    pub overlap: f64,
    pub montage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalSection {
    pub k: usize,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// ct or mri.
    pub modality: String,
    pub spacing_mm: f64,
    pub p_low: f64,
    pub p_high: f64,
    /// In voxels.
    pub sigma_spatial: f64,
    /// Fraction of the scan's intensity range.
    pub sigma_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub n: usize,
    pub extents: [usize; 3],
    pub blobs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of `<id>_image.nii.gz` / `<id>_mask.nii.gz` pairs. When
    /// empty, phantoms are generated from the `phantom` section.
    pub dir: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::Standard.as_str().into(),
            scale: "desk".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        Self {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            crop: t.augment.crop,
            flip: t.augment.flip,
            rotate: t.augment.rotate,
            fg_bias: t.augment.fg_bias,
            eps: DEFAULT_EPS,
            mode: "fold".into(),
            fold: 0,
        }
    }
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            window: TrainConfig::desk().window,
            overlap: DEFAULT_OVERLAP,
            montage: false,
        }
    }
}

impl Default for CrossvalSection {
    fn default() -> Self {
        Self {
            k: 4,
            val_fraction: DEFAULT_VAL_FRACTION,
        }
    }
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            modality: "ct".into(),
            spacing_mm: 1.0,
            p_low: 1.0,
            p_high: 99.0,
            sigma_spatial: 1.0,
            sigma_range: 0.1,
        }
    }
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            n: 8,
            extents: [64, 64, 48],
            blobs: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Ct,
    Mri,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Fold,
    All,
}

fn cfg_err(e: impl ToString) -> Error {
    Error::Config(e.to_string())
}

/// Parses `key=value`; the value is read as a TOML literal and falls back to
/// a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {s:?} is not of the form key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(Error::Usage(format!("override {s:?} has an empty key")));
    }
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn set_dotted(root: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut t = root;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn flatten(prefix: &str, t: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in t {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(inner) => flatten(&key, inner, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::resolve(Some(text), &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&str>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default()).map_err(cfg_err)?;
        if let Some(text) = file {
            // Quoted keys such as `"train.lr"` are split like bare dotted keys.
            let mut flat = BTreeMap::new();
            flatten("", &text.parse::<Table>().map_err(cfg_err)?, &mut flat);
            for (k, v) in flat {
                set_dotted(&mut table, &k, v)?;
            }
        }
        for (k, v) in overrides {
            set_dotted(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_file(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        self.scale()?;
        self.modality()?;
        self.train_mode()?;
        let model = self.model_config()?;
        self.train_config().validate(&model)?;
        if self.crossval.k < 2 {
            return Err(Error::Config(format!(
                "crossval.k must be at least 2, got {}",
                self.crossval.k
            )));
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        self.model.variant.parse().map_err(|e: hierseg_core::Error| cfg_err(e))
    }

    pub fn scale(&self) -> Result<Scale> {
        parse_scale(&self.model.scale)
    }

    pub fn modality(&self) -> Result<Modality> {
        match self.preprocess.modality.to_ascii_lowercase().as_str() {
            "ct" => Ok(Modality::Ct),
            "mri" | "mr" => Ok(Modality::Mri),
            m => Err(Error::Config(format!("unknown modality {m:?} (expected ct or mri)"))),
        }
    }

    pub fn train_mode(&self) -> Result<TrainMode> {
        match self.train.mode.as_str() {
            "fold" => Ok(TrainMode::Fold),
            "all" => Ok(TrainMode::All),
            m => Err(Error::Config(format!(
                "unknown train.mode {m:?} (expected fold or all)"
            ))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig::preset(self.variant()?, self.scale()?))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            augment: AugmentConfig {
                flip: t.flip,
                rotate: t.rotate,
                crop: t.crop,
                fg_bias: t.fg_bias,
            },
            window: self.infer.window,
            overlap: self.infer.overlap,
            eps: t.eps,
            seed: self.seed,
        }
    }

    pub fn crossval_config(&self) -> CrossvalConfig {
        CrossvalConfig {
            k: self.crossval.k,
            val_fraction: self.crossval.val_fraction,
            seed: self.seed,
            train: self.train_config(),
        }
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        (!self.data.dir.is_empty()).then(|| PathBuf::from(&self.data.dir))
    }

    /// One `key = value` line per setting, sorted by key.
    pub fn to_flat_toml(&self) -> String {
        let table = Table::try_from(self).expect("config serializes to a table");
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        flat.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_flat_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn parse_scale(s: &str) -> Result<Scale> {
    match s {
        "desk" => Ok(Scale::Desk),
        "full" => Ok(Scale::Full),
        _ => Err(Error::Config(format!(
            "unknown model.scale {s:?} (expected desk or full)"
        ))),
    }
}

pub fn scale_name(s: Scale) -> &'static str {
    match s {
        Scale::Desk => "desk",
        Scale::Full => "full",
    }
}
