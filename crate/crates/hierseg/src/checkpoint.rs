//! Safetensors checkpoints holding the complete training state.
//!
//! Tensors:
//! * `param/<name>`: every parameter and buffer of the network.
//! * `best/<name>`: the best-epoch parameters, when an epoch has run.
//! * `adam.m/<i>`, `adam.v/<i>`: optimizer moments, one per trainable
//!   parameter in network order.
//!
//! Metadata carries the model preset, the optimizer step count, the
//! generator position, the epoch history and the resolved run config.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use hierseg_core::model::{HierNet, ModelConfig, Scale, Variant};
use hierseg_core::optim::Adam;
use hierseg_core::train::{BestModel, EpochRecord, RngState, TrainState, TrainingHistory};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::{parse_scale, scale_name};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hierseg-checkpoint-1";

#[derive(Debug, Serialize, Deserialize)]
struct RecordJson {
    epoch: usize,
    train_loss: f64,
    val_dsc: f64,
    wall_clock: f64,
    rng: RngJson,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngJson {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl From<&RngState> for RngJson {
    fn from(r: &RngState) -> Self {
        Self {
            seed: r.seed.iter().map(|b| format!("{b:02x}")).collect(),
            stream: r.stream,
            word_pos: r.word_pos.to_string(),
        }
    }
}

impl RngJson {
    fn to_state(&self) -> std::result::Result<RngState, String> {
        if self.seed.len() != 64 {
            return Err(format!("rng seed must be 64 hex digits, got {}", self.seed.len()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|e| e.to_string())?;
        }
        Ok(RngState {
            seed,
            stream: self.stream,
            word_pos: self
                .word_pos
                .parse()
                .map_err(|e: std::num::ParseIntError| e.to_string())?,
        })
    }
}

/// Everything needed to rebuild a [`TrainState`].
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub scale: Scale,
    pub state: TrainState,
    /// Resolved run config at save time (flat TOML).
    pub config: String,
}

impl Checkpoint {
    pub fn model_config(&self) -> &ModelConfig {
        self.state.model.config()
    }
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn to_f32(path: &Path, name: &str, t: &TensorView<'_>) -> Result<Vec<f32>> {
    if t.dtype() != Dtype::F32 {
        return Err(Error::format(
            path,
            format!("tensor {name} has dtype {:?}, expected F32", t.dtype()),
        ));
    }
    Ok(t.data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn to_bytes(state: &TrainState, scale: Scale, config: &str) -> Result<Vec<u8>> {
    let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let named = state.model.named_params();
    for (name, p) in &named {
        owned.push((format!("param/{name}"), p.shape.clone(), f32_bytes(&p.value)));
    }
    if let Some(best) = &state.best {
        for ((name, p), v) in named.iter().zip(&best.params) {
            owned.push((format!("best/{name}"), p.shape.clone(), f32_bytes(v)));
        }
    }
    for (prefix, moments) in [
        ("adam.m", state.optimizer.first_moments()),
        ("adam.v", state.optimizer.second_moments()),
    ] {
        for (i, m) in moments.iter().enumerate() {
            owned.push((format!("{prefix}/{i:04}"), vec![m.len()], f32_bytes(m)));
        }
    }
    let history: Vec<RecordJson> = state
        .history
        .records
        .iter()
        .map(|r| RecordJson {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_dsc: r.val_dsc,
            wall_clock: r.wall_clock,
            rng: (&r.rng).into(),
        })
        .collect();
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("model.variant".into(), state.model.config().variant.as_str().into());
    meta.insert("model.scale".into(), scale_name(scale).into());
    meta.insert("epoch".into(), state.history.len().to_string());
    meta.insert("adam.step".into(), state.optimizer.steps().to_string());
    meta.insert("adam.lr".into(), json(&state.optimizer.lr));
    meta.insert("rng".into(), json(&RngJson::from(&RngState::capture(&state.rng))));
    meta.insert("history".into(), json(&history));
    if let Some(best) = &state.best {
        meta.insert("best.epoch".into(), best.epoch.to_string());
        meta.insert("best.val_dsc".into(), json(&best.val_dsc));
    }
    meta.insert("config".into(), config.to_string());

    let views = owned
        .iter()
        .map(|(n, shape, data)| Ok((n.as_str(), TensorView::new(Dtype::F32, shape.clone(), data)?)))
        .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
        .map_err(|e| Error::Format {
            path: "<checkpoint>".into(),
            message: e.to_string(),
        })?;
    safetensors::serialize(views, Some(meta)).map_err(|e| Error::Format {
        path: "<checkpoint>".into(),
        message: e.to_string(),
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("metadata serializes")
}

pub fn save(path: &Path, state: &TrainState, scale: Scale, config: &str) -> Result<()> {
    let bytes = to_bytes(state, scale, config)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("safetensors.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(path, &bytes)
}

pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: String| Error::format(path, m);
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| bad(format!("checkpoint metadata lacks {k:?}")))
    };
    if get("format")? != FORMAT {
        return Err(bad(format!("unsupported checkpoint format {:?}", get("format")?)));
    }
    let parse_json =
        |k: &str| -> Result<serde_json::Value> { serde_json::from_str(get(k)?).map_err(|e| bad(format!("{k}: {e}"))) };
    let variant: Variant = get("model.variant")?.parse()?;
    let scale = parse_scale(get("model.scale")?)?;
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;

    let mut model = HierNet::new(ModelConfig::preset(variant, scale), 0)?;
    let read_set = |prefix: &str, model: &HierNet| -> Result<Vec<Vec<f32>>> {
        model
            .named_params()
            .iter()
            .map(|(name, p)| {
                let key = format!("{prefix}/{name}");
                let t = tensors.tensor(&key).map_err(|e| bad(format!("{key}: {e}")))?;
                if t.shape() != p.shape.as_slice() {
                    return Err(bad(format!("{key} has shape {:?}, expected {:?}", t.shape(), p.shape)));
                }
                to_f32(path, &key, &t)
            })
            .collect()
    };
    let params = read_set("param", &model)?;
    let expected = params.len();
    let n_tensors = tensors.names().iter().filter(|n| n.starts_with("param/")).count();
    if n_tensors != expected {
        return Err(bad(format!(
            "checkpoint has {n_tensors} parameters, the model has {expected}"
        )));
    }
    model.restore(&params)?;

    let best = match meta.get("best.epoch") {
        None => None,
        Some(e) => Some(BestModel {
            epoch: e.parse().map_err(|_| bad(format!("bad best.epoch {e:?}")))?,
            val_dsc: serde_json::from_value(parse_json("best.val_dsc")?).map_err(|e| bad(e.to_string()))?,
            params: read_set("best", &model)?,
        }),
    };

    let read_moments = |prefix: &str| -> Result<Vec<Vec<f32>>> {
        let mut names: Vec<&str> = tensors.names().into_iter().filter(|n| n.starts_with(prefix)).collect();
        names.sort_unstable();
        names
            .into_iter()
            .map(|n| to_f32(path, n, &tensors.tensor(n).map_err(|e| bad(e.to_string()))?))
            .collect()
    };
    let lr: f64 = serde_json::from_value(parse_json("adam.lr")?).map_err(|e| bad(e.to_string()))?;
    let step: u64 = get("adam.step")?.parse().map_err(|_| bad("bad adam.step".into()))?;
    let mut optimizer = Adam::new(lr);
    optimizer.restore(step, read_moments("adam.m/")?, read_moments("adam.v/")?)?;

    let rng: RngJson = serde_json::from_value(parse_json("rng")?).map_err(|e| bad(e.to_string()))?;
    let rng = rng.to_state().map_err(bad)?.restore();
    let records: Vec<RecordJson> = serde_json::from_value(parse_json("history")?).map_err(|e| bad(e.to_string()))?;
    let history = TrainingHistory {
        records: records
            .into_iter()
            .map(|r| {
                Ok(EpochRecord {
                    epoch: r.epoch,
                    train_loss: r.train_loss,
                    val_dsc: r.val_dsc,
                    wall_clock: r.wall_clock,
                    rng: r.rng.to_state().map_err(bad)?,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(Checkpoint {
        scale,
        state: TrainState {
            model,
            optimizer,
            rng,
            history,
            best,
        },
        config: get("config")?.clone(),
    })
}
