//! The run configuration: one JSON document, every key optional, unknown keys rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use signforge::pipeline::VocabSpec;
use signforge::signmodel::{ModelConfig, SizeClass};
use signforge::training::{LossMode, NewSamplePriority, Optimizer, RLConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dimension preset; `embed_dim`, `hidden_dim` and `ffn_dim` override it individually.
    pub size: SizeClass,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub layers: usize,
    pub heads: usize,
    pub max_sent_length: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub case_sensitive: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub loss_mode: LossMode,
    pub optimizer: Optimizer,
    pub plc_enabled: bool,
    pub eta: f64,
    pub new_sample_priority: NewSamplePriority,
    pub input_noise: f64,
    pub self_feed: f64,
    pub epochs: usize,
    /// Generate and score the training clips every this many epochs (0 = never);
    /// fills `dtw_dev` in the training log.
    pub eval_every: usize,
    pub seed: u64,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            size: model.size_class,
            embed_dim: None,
            hidden_dim: None,
            ffn_dim: None,
            layers: model.layers,
            heads: model.heads,
            max_sent_length: model.max_sent_length,
            dropout: model.dropout,
            vocab_size: 16000,
            case_sensitive: true,
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.0,
            lr_floor: 0.0,
            loss_mode: LossMode::Mse,
            optimizer: Optimizer::Sgd,
            plc_enabled: false,
            eta: 1.0,
            new_sample_priority: NewSamplePriority::MaxSeen,
            input_noise: 0.0,
            self_feed: 0.0,
            epochs: 30,
            eval_every: 0,
            seed: 0,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn model(&self) -> ModelConfig {
        let (embed, hidden, ffn) = self.size.dims();
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            embed_dim: self.embed_dim.unwrap_or(embed),
            hidden_dim: self.hidden_dim.unwrap_or(hidden),
            ffn_dim: self.ffn_dim.unwrap_or(ffn),
            max_sent_length: self.max_sent_length,
            dropout: self.dropout,
            size_class: self.size,
        }
    }

    pub fn training(&self) -> RLConfig {
        RLConfig {
            eta: self.eta,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_floor: self.lr_floor,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            plc_enabled: self.plc_enabled,
            new_sample_priority: self.new_sample_priority,
            loss_mode: self.loss_mode,
            optimizer: self.optimizer,
            input_noise: self.input_noise,
            self_feed: self.self_feed,
        }
    }

    pub fn vocab(&self) -> VocabSpec {
        VocabSpec {
            size: self.vocab_size,
            case_sensitive: self.case_sensitive,
        }
    }

    /// Model and training checks; the message names the violated rule.
    pub fn validate(&self) -> Result<(), String> {
        self.model().validate().map_err(|e| e.to_string())?;
        self.training().validate().map_err(|e| e.to_string())?;
        if self.vocab_size < 5 {
            return Err(format!("vocab_size {} must be at least 5", self.vocab_size));
        }
        Ok(())
    }
}
