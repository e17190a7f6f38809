use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcl::MatchingStrategy;
use crate::pipeline::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Everything a training run depends on besides the dataset. Read from TOML;
/// missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    pub alpha: f64,
    pub strategy: MatchingStrategy,
    pub mode: Mode,
    /// Train one classifier over every class with plain cross-entropy.
    pub gcl: bool,
    /// Keep the distillation term. `false` behaves like `alpha = 0`.
    pub ckd: bool,

    pub obj_layers: usize,
    pub rel_layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub emb_dim: usize,
    pub spatial_dim: usize,
    pub union_dim: usize,

    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    /// Steps at which the learning rate is multiplied by `decay_factor`.
    pub decay_steps: Vec<usize>,
    pub decay_factor: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Weight of the auxiliary object-classification loss outside predcls.
    pub object_loss_weight: f64,

    pub label_noise: f64,
    pub box_jitter: f64,
    /// Record the loss every this many steps.
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: 4.0,
            alpha: 1.0,
            strategy: MatchingStrategy::TopDown,
            mode: Mode::PredCls,
            gcl: true,
            ckd: true,
            obj_layers: 4,
            rel_layers: 2,
            model_dim: 32,
            heads: 4,
            ffn_dim: 64,
            emb_dim: 16,
            spatial_dim: 8,
            union_dim: 32,
            seed: 1,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            steps: 2000,
            batch_size: 8,
            warmup_steps: 100,
            decay_steps: vec![1500],
            decay_factor: 0.1,
            grad_clip: 5.0,
            object_loss_weight: 1.0,
            label_noise: 0.2,
            box_jitter: 0.02,
            log_every: 10,
        }
    }
}

impl RunConfig {
    /// Settings for the standard synthetic benchmark: the defaults with Adam.
    pub fn benchmark() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Distillation weight actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.gcl && self.ckd {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.mu.is_nan() || self.mu < 1.0 {
            return bad(format!("mu must be >= 1, got {}", self.mu));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.obj_layers == 0 || self.rel_layers == 0 {
            return bad("encoder layer counts must be positive".into());
        }
        for (name, v) in [
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("emb_dim", self.emb_dim),
            ("spatial_dim", self.spatial_dim),
            ("union_dim", self.union_dim),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 1], got {}", self.label_noise));
        }
        if !(self.box_jitter >= 0.0 && self.box_jitter.is_finite()) {
            return bad(format!("box_jitter must be >= 0, got {}", self.box_jitter));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.object_loss_weight < 0.0 {
            return bad("weight_decay, grad_clip and object_loss_weight must be >= 0".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml_str("mu = 3.0\nstrategy = \"adjacent\"\nmode = \"sgcls\"\n").unwrap();
        assert_eq!(cfg.mu, 3.0);
        assert_eq!(cfg.strategy, MatchingStrategy::Adjacent);
        assert_eq!(cfg.mode, Mode::SgCls);
        assert_eq!(cfg.steps, RunConfig::default().steps);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "mu = 0.5",
            "alpha = -1.0",
            "heads = 3",
            "lr = 0.0",
            "strategy = \"sideways\"",
            "unknown_key = 1",
            "steps = \"many\"",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn ablation_switches_zero_alpha() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.effective_alpha(), 1.0);
        cfg.ckd = false;
        assert_eq!(cfg.effective_alpha(), 0.0);
        cfg.ckd = true;
        cfg.gcl = false;
        assert_eq!(cfg.effective_alpha(), 0.0);
    }
}
