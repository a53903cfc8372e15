//! Versioned JSON checkpoints for trained models.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const FORMAT: &str = "storyrewrite.checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<A, T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub vocab_hash: String,
    pub config_hash: Option<String>,
    /// Global seed of the producing run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub arch: A,
    pub train: T,
    pub params: ParamSet,
}

impl<A: Serialize + DeserializeOwned, T: Serialize + DeserializeOwned> Checkpoint<A, T> {
    pub fn new(kind: &str, vocab_hash: String, arch: A, train: T, params: ParamSet) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            vocab_hash,
            config_hash: None,
            seed: None,
            arch,
            train,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        if ck.kind != kind {
            return Err(Error::Format(format!(
                "{}: expected a {kind} checkpoint, found {}",
                path.display(),
                ck.kind
            )));
        }
        Ok(ck)
    }
}

/// Copies `loaded` into a freshly laid-out parameter set after checking that
/// names and shapes agree.
pub(crate) fn restore_params(fresh: &mut ParamSet, loaded: ParamSet) -> Result<()> {
    if fresh.names != loaded.names {
        return Err(Error::Format("checkpoint parameter names do not match the architecture".into()));
    }
    for (k, (a, b)) in fresh.values.iter().zip(&loaded.values).enumerate() {
        if a.dim() != b.dim() {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?}, expected {:?}",
                fresh.names[k],
                b.dim(),
                a.dim()
            )));
        }
    }
    if !loaded.all_finite() {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    *fresh = loaded;
    Ok(())
}
