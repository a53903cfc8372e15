//! Pipeline configuration: one file drives every command.
//!
//! Precedence, lowest first: built-in defaults, the config file (TOML, or
//! JSON when the extension is `.json`), then `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{GeneratorArch, GeneratorTrainConfig, SamplerConfig};
use crate::seed::derive_seed;
use crate::tagger::{TaggerArch, TaggerTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Parent of the per-config run directories. Not part of the config hash.
    pub output_dir: PathBuf,
    pub tokenizer: String,
    pub max_sequence_length: usize,
    pub min_count: usize,
    pub data: DataConfig,
    pub tagger: TaggerSection,
    pub generator: GeneratorSection,
    pub sampler: SamplerSection,
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    /// Use this vocabulary instead of building one from the training split.
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub lambda: f64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub k: usize,
    pub temperature: f64,
    pub max_ending_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub replace_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            output_dir: PathBuf::from("runs"),
            tokenizer: "basic".into(),
            max_sequence_length: crate::corpus::DEFAULT_MAX_LEN,
            min_count: 1,
            data: DataConfig::default(),
            tagger: TaggerSection::default(),
            generator: GeneratorSection::default(),
            sampler: SamplerSection::default(),
            augment: AugmentSection::default(),
        }
    }
}

impl Default for TaggerSection {
    fn default() -> Self {
        let a = TaggerArch::default();
        let t = TaggerTrainConfig::default();
        TaggerSection {
            lambda: t.lambda,
            dim: a.dim,
            layers: a.layers,
            heads: a.heads,
            ff_dim: a.ff_dim,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
        }
    }
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let a = GeneratorArch::default();
        let t = GeneratorTrainConfig::default();
        GeneratorSection {
            dim: a.dim,
            layers: a.layers,
            heads: a.heads,
            ff_dim: a.ff_dim,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
        }
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection {
            k: s.k,
            temperature: s.temperature,
            max_ending_length: s.max_ending_length,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            enabled: true,
            replace_ratio: crate::augment::DEFAULT_REPLACE_RATIO,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg.resolve_paths(path.parent().unwrap_or(Path::new(""))))
    }

    /// Makes relative paths in the file relative to the file's directory.
    fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.train);
        fix(&mut self.data.test);
        if let Some(p) = self.data.dev.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.vocab.as_mut() {
            fix(p);
        }
        self
    }

    /// Applies one `dotted.key=value` override. The value is read as a TOML
    /// literal when possible, otherwise as a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut slot = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: {part} is not a section")))?;
            if i + 1 == parts.len() {
                let known = table.contains_key(*part) || optional_key(key);
                if !known {
                    return Err(Error::Config(format!("unknown config key {key:?}")));
                }
                table.insert(part.to_string(), value.clone());
                break;
            }
            slot = table
                .get_mut(*part)
                .ok_or_else(|| Error::Config(format!("unknown config section {part:?} in {key:?}")))?;
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tokenizer != "basic" {
            return bad(format!("unknown tokenizer {:?}; available: basic", self.tokenizer));
        }
        if !(self.tagger.lambda > 0.0 && self.tagger.lambda < 1.0) {
            return bad(format!("tagger.lambda must lie in (0, 1), got {}", self.tagger.lambda));
        }
        if self.sampler.k == 0 {
            return bad("sampler.k must be at least 1".into());
        }
        if !(self.sampler.temperature > 0.0 && self.sampler.temperature.is_finite()) {
            return bad(format!("sampler.temperature must be positive, got {}", self.sampler.temperature));
        }
        if self.sampler.max_ending_length == 0 {
            return bad("sampler.max_ending_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.augment.replace_ratio) {
            return bad(format!("augment.replace_ratio must lie in [0, 1], got {}", self.augment.replace_ratio));
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        if self.max_sequence_length <= self.sampler.max_ending_length + 8 {
            return bad(format!(
                "max_sequence_length {} leaves no room for context next to max_ending_length {}",
                self.max_sequence_length, self.sampler.max_ending_length
            ));
        }
        for (name, dim, heads, layers) in [
            ("tagger", self.tagger.dim, self.tagger.heads, self.tagger.layers),
            ("generator", self.generator.dim, self.generator.heads, self.generator.layers),
        ] {
            if dim == 0 || heads == 0 || layers == 0 || dim % heads != 0 {
                return bad(format!("{name}: dim must be a positive multiple of heads, layers positive"));
            }
        }
        for (name, lr, batch, epochs) in [
            ("tagger", self.tagger.learning_rate, self.tagger.batch_size, self.tagger.epochs),
            ("generator", self.generator.learning_rate, self.generator.batch_size, self.generator.epochs),
        ] {
            if !(lr > 0.0) || batch == 0 || epochs == 0 {
                return bad(format!("{name}: learning_rate, batch_size and epochs must be positive"));
            }
        }
        Ok(())
    }

    /// sha256 over the canonical JSON of every field except `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..12]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn tagger_arch(&self) -> TaggerArch {
        TaggerArch {
            dim: self.tagger.dim,
            layers: self.tagger.layers,
            heads: self.tagger.heads,
            ff_dim: self.tagger.ff_dim,
            max_len: self.max_sequence_length,
        }
    }

    pub fn tagger_train(&self) -> TaggerTrainConfig {
        TaggerTrainConfig {
            lambda: self.tagger.lambda,
            learning_rate: self.tagger.learning_rate,
            warmup_steps: self.tagger.warmup_steps,
            batch_size: self.tagger.batch_size,
            epochs: self.tagger.epochs,
            seed: derive_seed(self.seed, &["tagger"]),
            max_sequence_length: self.max_sequence_length,
        }
    }

    /// The context may use whatever the longest ending leaves free.
    pub fn generator_arch(&self) -> GeneratorArch {
        GeneratorArch {
            dim: self.generator.dim,
            layers: self.generator.layers,
            heads: self.generator.heads,
            ff_dim: self.generator.ff_dim,
            max_len: self.max_sequence_length,
            max_context_len: self.max_sequence_length - self.sampler.max_ending_length - 1,
        }
    }

    pub fn generator_train(&self) -> GeneratorTrainConfig {
        GeneratorTrainConfig {
            learning_rate: self.generator.learning_rate,
            warmup_steps: self.generator.warmup_steps,
            batch_size: self.generator.batch_size,
            epochs: self.generator.epochs,
            seed: derive_seed(self.seed, &["generator"]),
            augment: self.augment.enabled,
            replace_ratio: self.augment.replace_ratio,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.sampler.k,
            temperature: self.sampler.temperature,
            seed: derive_seed(self.seed, &["sampler"]),
            max_ending_length: self.sampler.max_ending_length,
        }
    }
}

fn optional_key(key: &str) -> bool {
    matches!(key, "data.dev" | "data.vocab")
}
