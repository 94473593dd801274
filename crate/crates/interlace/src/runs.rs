//! Run directories: resolved configuration, checkpoints, and logs.

use std::path::{Path, PathBuf};

use interlace_core::forward::{ForwardConfig, ForwardModel};
use interlace_core::inverse::{InverseConfig, InverseModel};
use interlace_core::losses::LossWeights;
use interlace_core::train::{EpochLog, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::formats::{read_bytes, read_json, sha256_file, write_bytes};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const FORWARD_CKPT: &str = "forward.ckpt";
pub const INVERSE_CKPT: &str = "inverse.ckpt";

/// Model size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// The full architecture.
    Full,
    /// Narrow variant sized for a single CPU core.
    Desk,
}

/// Contents of a `--config` file; every section is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub train: Option<Value>,
    pub forward: Option<Value>,
    pub inverse: Option<Value>,
    pub loss: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(ConfigFile::default()),
        }
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o.clone(),
    }
}

/// `base` with the fields present in `over` replaced.
pub fn overlay<T: Serialize + DeserializeOwned + Clone>(base: &T, over: Option<&Value>, what: &str) -> Result<T> {
    let Some(over) = over else {
        return Ok(base.clone());
    };
    let mut v = serde_json::to_value(base).expect("plain data serializes");
    merge(&mut v, over);
    serde_json::from_value(v)
        .map_err(|e| interlace_core::Error::Config(format!("{what} section of the config file: {e}")).into())
}

pub fn forward_preset(p: Preset) -> ForwardConfig {
    match p {
        Preset::Full => ForwardConfig::default(),
        Preset::Desk => ForwardConfig::desk(),
    }
}

pub fn inverse_preset(p: Preset) -> InverseConfig {
    match p {
        Preset::Full => InverseConfig::default(),
        Preset::Desk => InverseConfig::desk(),
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: PathBuf,
    pub corpus_sha256: String,
    pub deterministic: bool,
    pub train: TrainConfig,
    pub forward: Option<ForwardConfig>,
    pub inverse: Option<InverseConfig>,
    pub loss: Option<LossWeights>,
    /// Fingerprint of the model configuration, as stored in the checkpoint.
    pub fingerprint: String,
    /// SHA-256 of the surrogate checkpoint an inverse model was trained with.
    pub forward_ckpt_sha256: Option<String>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_loss: f64,
    pub checkpoint_sha256: String,
}

pub fn write_log(dir: &Path, log: &[EpochLog]) -> Result<()> {
    crate::formats::write_csv(&dir.join(LOG_FILE), log)
}

pub fn save_checkpoint(path: &Path, bytes: &[u8]) -> Result<String> {
    write_bytes(path, bytes)?;
    sha256_file(path)
}

fn require(path: &Path, what: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::Missing(format!("{what} {}", path.display())));
    }
    read_bytes(path)
}

/// Loads a surrogate checkpoint. When the checkpoint sits in a run
/// directory, its fingerprint must match the recorded one.
pub fn load_forward(path: &Path, expected: Option<&ForwardConfig>) -> Result<ForwardModel> {
    let m = ForwardModel::from_bytes(&require(path, "forward checkpoint")?, expected)?;
    check_recorded(path, format!("{:016x}", m.config().fingerprint()))?;
    Ok(m)
}

pub fn load_inverse(path: &Path, expected: Option<&InverseConfig>) -> Result<InverseModel> {
    let m = InverseModel::from_bytes(&require(path, "inverse checkpoint")?, expected)?;
    check_recorded(path, format!("{:016x}", m.config().fingerprint()))?;
    Ok(m)
}

fn sibling_config(ckpt: &Path) -> Option<PathBuf> {
    let p = ckpt.parent()?.join(CONFIG_FILE);
    p.exists().then_some(p)
}

fn check_recorded(ckpt: &Path, fingerprint: String) -> Result<()> {
    if let Some(p) = sibling_config(ckpt) {
        let rc: RunConfig = read_json(&p)?;
        if rc.fingerprint != fingerprint {
            return Err(interlace_core::Error::Config(format!(
                "{} has fingerprint {fingerprint} but its run records {}",
                ckpt.display(),
                rc.fingerprint
            ))
            .into());
        }
    }
    Ok(())
}

/// Confirms that an inverse model was trained against this surrogate.
pub fn check_pair(fwd_path: &Path, fwd: &ForwardModel, inv_path: &Path, inv: &InverseModel) -> Result<()> {
    if inv.norm != fwd.norm {
        return Err(interlace_core::Error::Config(
            "inverse and forward checkpoints use different normalization statistics".into(),
        )
        .into());
    }
    if let Some(p) = sibling_config(inv_path) {
        let rc: RunConfig = read_json(&p)?;
        if let Some(h) = rc.forward_ckpt_sha256 {
            if h != sha256_file(fwd_path)? {
                return Err(interlace_core::Error::Config(format!(
                    "{} was trained against a different surrogate than {}",
                    inv_path.display(),
                    fwd_path.display()
                ))
                .into());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_replaces_only_given_fields() {
        let base = TrainConfig { epochs: 7, ..TrainConfig::default() };
        let v: Value = serde_json::json!({"lr0": 0.5});
        let t: TrainConfig = overlay(&base, Some(&v), "train").unwrap();
        assert_eq!((t.epochs, t.lr0, t.batch_size), (7, 0.5, 4));
        let bad: Value = serde_json::json!({"lr0": "fast"});
        assert!(overlay(&base, Some(&bad), "train").is_err());
    }

    #[test]
    fn nested_overlay() {
        let base = ForwardConfig::desk();
        let v: Value = serde_json::json!({"pooled_grid": [4, 8], "channels": 6});
        let f: ForwardConfig = overlay(&base, Some(&v), "forward").unwrap();
        assert_eq!((f.pooled_grid, f.channels, f.gfe_blocks), ((4, 8), 6, base.gfe_blocks));
    }
}
