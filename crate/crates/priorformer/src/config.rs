//! `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys that are absent keep their defaults; unknown or repeated keys and
//! unparsable values are errors naming the file, line and key.
//!
//! A run configuration holds model and training keys:
//!
//! ```text
//! layers = 2
//! heads = 2
//! width = 16
//! ff_width = 32
//! tokens = 4
//! feature_width = 16
//! content_width = 8
//! distortion_width = 8
//! gru_hidden = 16
//! tau = 12
//! gamma = 0.5
//! content_token = true
//! distortion_token = true
//! temporal_pooling = true
//! gru = true
//! model_seed = 0
//! epochs = 20
//! learning_rate = 0.003
//! batch_size = 8
//! optimizer = adam
//! split_ratio = 0.8
//! train_seed = 0
//! ```
//!
//! A synthetic dataset spec uses `videos`, `frames`, `tokens`,
//! `feature_width`, `content_width`, `distortion_width`, `noise`,
//! `clusters` and `seed`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use priorformer_core::model::ModelConfig;
use priorformer_core::synth::SynthSpec;
use priorformer_core::train::{OptimizerKind, TrainConfig};

#[derive(Debug, thiserror::Error)]
#[error("{}{}: {reason}", source_name(.path), .line.map(|l| format!(":{l}")).unwrap_or_default())]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub reason: String,
}

fn source_name(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<config>".into())
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed file; typed getters consume keys so leftovers can be reported.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: Option<PathBuf>,
    entries: BTreeMap<String, Entry>,
}

impl KeyValues {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut kv = KeyValues {
            path: path.map(Path::to_path_buf),
            entries: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(kv.error(Some(line), format!("expected `key = value`, found `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(kv.error(Some(line), "missing key before `=`".into()));
            }
            let entry = Entry {
                value: value.to_string(),
                line,
            };
            if let Some(prev) = kv.entries.insert(key.to_string(), entry) {
                return Err(kv.error(Some(line), format!("key `{key}` repeats line {}", prev.line)));
            }
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self, crate::Failure> {
        let text = std::fs::read_to_string(path).map_err(|source| crate::Failure::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text, Some(path))?)
    }

    fn error(&self, line: Option<usize>, reason: String) -> ConfigError {
        ConfigError {
            path: self.path.clone(),
            line,
            reason,
        }
    }

    fn take<T>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(entry) = self.entries.remove(key) {
            *slot = entry.value.parse().map_err(|e| {
                self.error(
                    Some(entry.line),
                    format!("key `{key}`: cannot parse `{}`: {e}", entry.value),
                )
            })?;
        }
        Ok(())
    }

    fn take_optimizer(&mut self, slot: &mut OptimizerKind) -> Result<(), ConfigError> {
        if let Some(entry) = self.entries.remove("optimizer") {
            *slot = match entry.value.to_ascii_lowercase().as_str() {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => {
                    return Err(self.error(
                        Some(entry.line),
                        format!("key `optimizer`: unknown optimizer `{other}` (adam or sgd)"),
                    ))
                }
            };
        }
        Ok(())
    }

    /// Fails on the first key no getter consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(self.error(Some(e.line), format!("unknown key `{key}`"))),
        }
    }

    pub fn model_config(&mut self, mut base: ModelConfig) -> Result<ModelConfig, ConfigError> {
        let e = &mut base.encoder;
        self.take("layers", &mut e.layers)?;
        self.take("heads", &mut e.heads)?;
        self.take("width", &mut e.width)?;
        self.take("ff_width", &mut e.ff_width)?;
        self.take("tokens", &mut e.tokens)?;
        self.take("feature_width", &mut e.feature_width)?;
        self.take("content_width", &mut e.content_width)?;
        self.take("distortion_width", &mut e.distortion_width)?;
        self.take("gru_hidden", &mut base.gru_hidden)?;
        self.take("tau", &mut base.pooling.tau)?;
        self.take("gamma", &mut base.pooling.gamma)?;
        let a = &mut base.ablation;
        self.take("content_token", &mut a.use_content_token)?;
        self.take("distortion_token", &mut a.use_distortion_token)?;
        self.take("temporal_pooling", &mut a.use_temporal_pooling)?;
        self.take("gru", &mut a.use_gru)?;
        self.take("model_seed", &mut base.seed)?;
        base.validate().map_err(|e| self.error(None, e.to_string()))?;
        Ok(base)
    }

    pub fn train_config(&mut self, mut base: TrainConfig) -> Result<TrainConfig, ConfigError> {
        self.take("epochs", &mut base.epochs)?;
        self.take("learning_rate", &mut base.learning_rate)?;
        self.take("batch_size", &mut base.batch_size)?;
        self.take_optimizer(&mut base.optimizer)?;
        self.take("split_ratio", &mut base.split_ratio)?;
        self.take("train_seed", &mut base.seed)?;
        base.validate().map_err(|e| self.error(None, e.to_string()))?;
        Ok(base)
    }

    pub fn synth_spec(&mut self, mut base: SynthSpec) -> Result<SynthSpec, ConfigError> {
        self.take("videos", &mut base.videos)?;
        self.take("frames", &mut base.frames)?;
        self.take("tokens", &mut base.tokens)?;
        self.take("feature_width", &mut base.feature_width)?;
        self.take("content_width", &mut base.content_width)?;
        self.take("distortion_width", &mut base.distortion_width)?;
        self.take("noise", &mut base.noise)?;
        self.take("clusters", &mut base.clusters)?;
        self.take("seed", &mut base.seed)?;
        base.validate().map_err(|e| self.error(None, e.to_string()))?;
        Ok(base)
    }
}

/// Model and training settings from one run configuration file.
pub fn read_run_config(
    path: &Path,
    model: ModelConfig,
    train: TrainConfig,
) -> Result<(ModelConfig, TrainConfig), crate::Failure> {
    let mut kv = KeyValues::read(path)?;
    let model = kv.model_config(model)?;
    let train = kv.train_config(train)?;
    kv.finish()?;
    Ok((model, train))
}

pub fn read_synth_spec(path: &Path) -> Result<SynthSpec, crate::Failure> {
    let mut kv = KeyValues::read(path)?;
    let spec = kv.synth_spec(SynthSpec::default())?;
    kv.finish()?;
    Ok(spec)
}

/// Renders a run configuration in the format [`read_run_config`] accepts.
pub fn format_run_config(model: &ModelConfig, train: &TrainConfig) -> String {
    let e = &model.encoder;
    let a = &model.ablation;
    let optimizer = match train.optimizer {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sgd => "sgd",
    };
    [
        ("layers", e.layers.to_string()),
        ("heads", e.heads.to_string()),
        ("width", e.width.to_string()),
        ("ff_width", e.ff_width.to_string()),
        ("tokens", e.tokens.to_string()),
        ("feature_width", e.feature_width.to_string()),
        ("content_width", e.content_width.to_string()),
        ("distortion_width", e.distortion_width.to_string()),
        ("gru_hidden", model.gru_hidden.to_string()),
        ("tau", model.pooling.tau.to_string()),
        ("gamma", model.pooling.gamma.to_string()),
        ("content_token", a.use_content_token.to_string()),
        ("distortion_token", a.use_distortion_token.to_string()),
        ("temporal_pooling", a.use_temporal_pooling.to_string()),
        ("gru", a.use_gru.to_string()),
        ("model_seed", model.seed.to_string()),
        ("epochs", train.epochs.to_string()),
        ("learning_rate", train.learning_rate.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("optimizer", optimizer.to_string()),
        ("split_ratio", train.split_ratio.to_string()),
        ("train_seed", train.seed.to_string()),
    ]
    .iter()
    .map(|(k, v)| format!("{k} = {v}\n"))
    .collect()
}
