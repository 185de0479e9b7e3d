use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TinyLmError;

/// Architecture hyper-parameters. Positions are rotary (inside attention)
/// and every sub-block is pre-normalized with RMSNorm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 6,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            max_seq: 16,
            vocab_size: super::Vocab::SIZE,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Two layers, `d_model` 16: the size used for gradient checks.
    pub fn small() -> Self {
        Self {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), TinyLmError> {
        let bad = |msg: String| Err(TinyLmError::InvalidConfig(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_seq == 0 {
            return bad("all sizes must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.head_dim() % 2 != 0 {
            return bad(format!("rotary needs an even head dimension, got {}", self.head_dim()));
        }
        if self.vocab_size < super::Vocab::SIZE {
            return bad(format!("vocab_size {} smaller than the tokenizer", self.vocab_size));
        }
        Ok(())
    }
}

fn default_weight_decay() -> f64 {
    0.1
}
fn default_warmup() -> usize {
    200
}
fn default_eval_every() -> usize {
    0
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_min_lr_ratio() -> f64 {
    0.05
}

/// Optimizer schedule. Read from TOML; only the first five fields are
/// required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the dataset used for training; the rest is held out.
    pub split_fraction: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    /// Held-out evaluation period in steps; 0 means once per epoch.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Cosine decay floor as a fraction of `lr`.
    #[serde(default = "default_min_lr_ratio")]
    pub min_lr_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 12_000,
            batch_size: 64,
            seed: 0,
            split_fraction: 0.8,
            weight_decay: default_weight_decay(),
            warmup_steps: default_warmup(),
            eval_every: default_eval_every(),
            grad_clip: default_grad_clip(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            min_lr_ratio: default_min_lr_ratio(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, TinyLmError> {
        let cfg: Self = toml::from_str(s).map_err(|e| TinyLmError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TinyLmError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    pub fn validate(&self) -> Result<(), TinyLmError> {
        let bad = |msg: &str| Err(TinyLmError::InvalidConfig(msg.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return bad("split_fraction must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate at `step` (0-based): linear warmup then cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps.min(step)) as f64 / span).min(1.0);
        let floor = self.lr * self.min_lr_ratio;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let cfg = TrainConfig::from_toml_str("lr = 0.001\nsteps = 10\nbatch_size = 4\nseed = 7\nsplit_fraction = 0.8\n").unwrap();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.weight_decay, 0.1);
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml_str("lr = -1.0\nsteps = 1\nbatch_size = 1\nseed = 0\nsplit_fraction = 0.5").is_err());
        assert!(TrainConfig::from_toml_str("lr = 0.1\nsteps = 1\nbatch_size = 1\nseed = 0").is_err());
        let cfg = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            lr: 1.0,
            steps: 100,
            warmup_steps: 10,
            min_lr_ratio: 0.0,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(99) < 0.01);
    }
}
