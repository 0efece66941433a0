//! Run configuration: built-in defaults, overridden by a JSON config file,
//! overridden by command-line flags.

use std::fs;
use std::path::Path;

use hyqr_core::eval::CardinalityMode;
use hyqr_core::kg::Split;
use hyqr_core::projection::ModelConfig;
use hyqr_core::train::TrainConfig;
use hyqr_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every tunable, all optional so that layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub dim: Option<usize>,
    pub layers: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub threshold: Option<f64>,
    pub cardinality: Option<CardinalityMode>,
    pub split: Option<Split>,
    pub threads: Option<usize>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: Settings) -> Settings {
        Settings {
            dim: over.dim.or(self.dim),
            layers: over.layers.or(self.layers),
            epochs: over.epochs.or(self.epochs),
            batch_size: over.batch_size.or(self.batch_size),
            lr: over.lr.or(self.lr),
            seed: over.seed.or(self.seed),
            max_steps: over.max_steps.or(self.max_steps),
            ks: over.ks.or(self.ks),
            threshold: over.threshold.or(self.threshold),
            cardinality: over.cardinality.or(self.cardinality),
            split: over.split.or(self.split),
            threads: over.threads.or(self.threads),
        }
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Usage("a seed is required (--seed or `seed` in the config file)".into()))
    }

    pub fn model(&self) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            dim: self.dim.unwrap_or(d.dim),
            layers: self.layers.unwrap_or(d.layers),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        Ok(TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            seed: self.require_seed()?,
            max_steps: self.max_steps.or(d.max_steps),
        })
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1).max(1)
    }

    pub fn split(&self) -> Split {
        self.split.unwrap_or(Split::Test)
    }

    /// Fills every field with the value actually in effect.
    pub fn resolved(&self) -> Settings {
        let model = self.model();
        let t = TrainConfig::default();
        let e = hyqr_core::eval::EvalOptions::default();
        Settings {
            dim: Some(model.dim),
            layers: Some(model.layers),
            epochs: Some(self.epochs.unwrap_or(t.epochs)),
            batch_size: Some(self.batch_size.unwrap_or(t.batch_size)),
            lr: Some(self.lr.unwrap_or(t.lr)),
            seed: self.seed,
            max_steps: self.max_steps,
            ks: Some(self.ks.clone().unwrap_or(e.ks)),
            threshold: Some(self.threshold.unwrap_or(e.threshold)),
            cardinality: Some(self.cardinality.unwrap_or(e.cardinality)),
            split: Some(self.split()),
            threads: Some(self.threads()),
        }
    }
}
