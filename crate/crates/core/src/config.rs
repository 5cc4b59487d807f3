//! The run configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::caption::{CaptionTrainConfig, Regime};
use crate::corpus::SyntheticConfig;
use crate::embeddings::CbowConfig;
use crate::error::{DccError, Result};
use crate::langmodel::LmTrainConfig;
use crate::lexical::LexicalTrainConfig;
use crate::transfer::DeltaBias;

/// Environment variable that overrides [`RunConfig::seed`].
pub const SEED_ENV: &str = "DCC_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Method whose post-transfer report becomes `report.json`.
    pub method: Regime,
    /// Sources averaged per target under delta transfer.
    pub n: usize,
    pub delta_bias: DeltaBias,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { method: Regime::Direct, n: 1, delta_bias: DeltaBias::CopySource }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into every stage's own seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Directory with paired.jsonl, unpaired_images.jsonl, unpaired_text.txt,
    /// test.jsonl and concepts.json. When absent, a synthetic dataset is
    /// generated from `synth` and written to `<out_dir>/data`.
    pub data_dir: Option<PathBuf>,
    pub synth: SyntheticConfig,
    pub vocab_min_count: usize,
    pub lexical: LexicalTrainConfig,
    pub embeddings: CbowConfig,
    pub lm: LmTrainConfig,
    pub caption: CaptionTrainConfig,
    pub transfer: TransferConfig,
    /// Caption regimes to train, each followed by its matching transfer.
    pub regimes: Vec<Regime>,
    pub max_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/demo"),
            data_dir: None,
            synth: SyntheticConfig::default(),
            vocab_min_count: 1,
            lexical: LexicalTrainConfig::default(),
            embeddings: CbowConfig::default(),
            lm: LmTrainConfig::default(),
            caption: CaptionTrainConfig::default(),
            transfer: TransferConfig::default(),
            regimes: vec![Regime::Direct, Regime::Delta],
            max_len: 12,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DccError::config(format!("bad run config: {e}")))
    }

    /// Reads a config file and applies the `DCC_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| DccError::config(format!("{SEED_ENV}=`{v}` is not an integer")))?;
        }
        Ok(())
    }

    /// The config with the master seed pushed into every stage.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = c.seed;
        c.lexical.seed = c.seed;
        c.embeddings.seed = c.seed;
        c.lm.seed = c.seed;
        c.caption.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_min_count", self.vocab_min_count),
            ("max_len", self.max_len),
            ("lexical.epochs", self.lexical.epochs),
            ("lexical.batch_size", self.lexical.batch_size),
            ("embeddings.dim", self.embeddings.dim),
            ("embeddings.window", self.embeddings.window),
            ("embeddings.epochs", self.embeddings.epochs),
            ("lm.embed_dim", self.lm.embed_dim),
            ("lm.hidden_dim", self.lm.hidden_dim),
            ("lm.epochs", self.lm.epochs),
            ("lm.batch_size", self.lm.batch_size),
            ("caption.epochs", self.caption.epochs),
            ("caption.batch_size", self.caption.batch_size),
            ("transfer.n", self.transfer.n),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(DccError::config(format!("{name} must be positive")));
            }
        }
        for (name, lr) in [
            ("lexical.lr", self.lexical.lr),
            ("embeddings.lr", self.embeddings.lr),
            ("lm.lr", self.lm.lr),
            ("caption.lr", self.caption.lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(DccError::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.regimes.is_empty() {
            return Err(DccError::config("at least one regime is required"));
        }
        if self.data_dir.is_none() {
            self.synth.validate()?;
            if self.synth.heldout.is_empty() {
                return Err(DccError::config("held-out experiment needs at least one held-out word"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
