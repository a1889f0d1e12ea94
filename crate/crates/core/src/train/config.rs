use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Weight decay as a fraction of the learning rate.
pub const WEIGHT_DECAY_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Two-logit softmax cross-entropy; equivalent to BCE on the logit difference.
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

impl LossKind {
    pub fn for_classes(num_classes: usize) -> Self {
        if num_classes == 2 {
            LossKind::BinaryCrossEntropy
        } else {
            LossKind::CategoricalCrossEntropy
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub folds: usize,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 1,
            epochs: 30,
            loss: LossKind::BinaryCrossEntropy,
            seed: 0,
            folds: 5,
            train_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    /// Always `0.05 * learning_rate`; there is no independent setting.
    pub fn weight_decay(&self) -> f64 {
        WEIGHT_DECAY_FRACTION * self.learning_rate
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("train config: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.folds < 2 {
            return fail(format!("folds {} must be at least 2", self.folds));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        Ok(())
    }

    pub fn with_point(&self, p: &GridPoint) -> Self {
        Self {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            ..self.clone()
        }
    }
}

/// One hyperparameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub batch_size: usize,
}

impl GridPoint {
    fn key_cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.learning_rate
            .total_cmp(&o.learning_rate)
            .then(self.hidden_dim.cmp(&o.hidden_dim))
            .then(self.dropout.total_cmp(&o.dropout))
            .then(self.batch_size.cmp(&o.batch_size))
    }

    pub fn apply(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            ..model.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub hidden_dims: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

/// The default grid is the single point lr 5e-4, hidden 32, no dropout,
/// batch 1. At lr 2e-3 the head units tend to die before the pooled slide
/// vector separates the classes on the synthetic Structure task.
impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![5e-4],
            hidden_dims: vec![32],
            dropouts: vec![0.0],
            batch_sizes: vec![1],
        }
    }
}

impl GridSpec {
    pub fn single(p: GridPoint) -> Self {
        Self {
            learning_rates: vec![p.learning_rate],
            hidden_dims: vec![p.hidden_dim],
            dropouts: vec![p.dropout],
            batch_sizes: vec![p.batch_size],
        }
    }

    /// Errors on empty or invalid lists; returns warnings for values outside
    /// the usual search ranges (lr 5e-6..2e-3, hidden 32..128, dropout
    /// 0..0.5, batch 1..32), which are allowed.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.learning_rates.is_empty()
            || self.hidden_dims.is_empty()
            || self.dropouts.is_empty()
            || self.batch_sizes.is_empty()
        {
            return Err(Error::invalid("grid: every list needs at least one value"));
        }
        let mut warnings = Vec::new();
        for &lr in &self.learning_rates {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("grid: learning rate {lr} must be positive")));
            }
            if !(5e-6..=2e-3).contains(&lr) {
                warnings.push(format!("learning rate {lr} outside [5e-6, 2e-3]"));
            }
        }
        for &h in &self.hidden_dims {
            if h == 0 {
                return Err(Error::invalid("grid: hidden dim 0"));
            }
            if !(32..=128).contains(&h) {
                warnings.push(format!("hidden dim {h} outside [32, 128]"));
            }
        }
        for &p in &self.dropouts {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("grid: dropout {p} outside [0, 1)")));
            }
            if p > 0.5 {
                warnings.push(format!("dropout {p} above 0.5"));
            }
        }
        for &b in &self.batch_sizes {
            if b == 0 {
                return Err(Error::invalid("grid: batch size 0"));
            }
            if b > 32 {
                warnings.push(format!("batch size {b} above 32"));
            }
        }
        Ok(warnings)
    }

    /// Cartesian product in ascending (lr, hidden, dropout, batch) order.
    /// Duplicates are kept; the selection rule makes the first one win.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &hidden_dim in &self.hidden_dims {
                for &dropout in &self.dropouts {
                    for &batch_size in &self.batch_sizes {
                        out.push(GridPoint {
                            learning_rate,
                            hidden_dim,
                            dropout,
                            batch_size,
                        });
                    }
                }
            }
        }
        out.sort_by(GridPoint::key_cmp);
        out
    }
}

fn template_model() -> ModelConfig {
    ModelConfig::new(0, 2)
}

/// Everything one run needs. `model.input_dim` 0 means "take it from the data".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            grid: GridSpec::default(),
            model: template_model(),
        }
    }
}

impl RunConfig {
    /// The configuration as JSON with the derived weight decay spelled out.
    pub fn resolved_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["train"]["weight_decay"] = json!(self.train.weight_decay());
        v
    }
}
