use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::NormMode;
use crate::model::ModelConfig;
use crate::objectives::{LossConfig, SslKind};

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight decay enters the gradient (classic Adam) instead of being
    /// applied to the weights directly.
    pub coupled_weight_decay: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Single-threaded evaluation, so timings are the only varying output.
    pub determinism: bool,
    pub eval_batch_size: usize,
    pub num_splits: usize,
    pub norm: NormMode,
    pub self_loops: bool,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 5e-4,
            coupled_weight_decay: true,
            batch_size: 3000,
            max_epochs: 500,
            patience: 100,
            seed: 0,
            determinism: true,
            eval_batch_size: 3000,
            num_splits: 10,
            norm: NormMode::Sym,
            self_loops: true,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `dotted.path=value`. The value is parsed as JSON when possible
    /// and as a bare string otherwise, so `loss.ssl_kind=barlow` works.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("override {path}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "need 1 <= max_epochs and patience <= max_epochs, got {} / {}",
                self.max_epochs, self.patience
            ));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.loss.ssl_kind == SslKind::Barlow && self.batch_size < 2 {
            return bad("barlow loss needs batch_size >= 2".into());
        }
        if self.num_splits == 0 {
            return bad("num_splits must be >= 1".into());
        }
        self.loss.validate()
    }
}
