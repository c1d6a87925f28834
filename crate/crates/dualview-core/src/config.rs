//! Architectural and training hyperparameters with their defaults.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::losses::LossConfig;

/// Which model variant to run; used for the component-attribution grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// gate replaced by a fixed 0.5 average of the two scores
    AvgFusion,
    /// local scores only; global scorer and gate unused
    NoGlobal,
    /// pass-through local features, global scores only
    NoLocal,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::AvgFusion,
        Ablation::NoGlobal,
        Ablation::NoLocal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::AvgFusion => "avg_fusion",
            Ablation::NoGlobal => "no_global",
            Ablation::NoLocal => "no_local",
        }
    }
}

impl core::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "avg_fusion" => Ok(Ablation::AvgFusion),
            "no_global" => Ok(Ablation::NoGlobal),
            "no_local" => Ok(Ablation::NoLocal),
            other => Err(format!(
                "unknown ablation '{other}' (expected full|avg_fusion|no_global|no_local)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub local_layers: usize,
    pub local_heads: usize,
    pub global_dim: usize,
    pub global_layers: usize,
    pub global_heads: usize,
    pub max_candidates: usize,
    pub local_mlp_hidden: usize,
    pub global_mlp_hidden: usize,
    pub gate_hidden: usize,
    pub layernorm_epsilon: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 768,
            local_layers: 2,
            local_heads: 12,
            global_dim: 512,
            global_layers: 2,
            global_heads: 8,
            max_candidates: 10,
            local_mlp_hidden: 512,
            global_mlp_hidden: 256,
            gate_hidden: 128,
            layernorm_epsilon: 1e-5,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            embed_dim: 8,
            local_layers: 1,
            local_heads: 2,
            global_dim: 8,
            global_layers: 1,
            global_heads: 2,
            max_candidates: 4,
            local_mlp_hidden: 6,
            global_mlp_hidden: 5,
            gate_hidden: 4,
            layernorm_epsilon: 1e-5,
            ablation: Ablation::Full,
        }
    }

    /// Desk-scale configuration used by the synthetic end-to-end runs.
    pub fn synthetic(embed_dim: usize) -> Self {
        ModelConfig {
            embed_dim,
            local_layers: 2,
            local_heads: 4,
            global_dim: 64,
            global_layers: 2,
            global_heads: 4,
            max_candidates: 10,
            local_mlp_hidden: 64,
            global_mlp_hidden: 32,
            gate_hidden: 16,
            layernorm_epsilon: 1e-5,
            ablation: Ablation::Full,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.local_heads
    }

    /// `[q_r; c_r; q_r*c_r; a]`
    pub fn local_feature_dim(&self) -> usize {
        3 * self.embed_dim + 1
    }

    /// local features plus the two scalar scores
    pub fn gate_doc_dim(&self) -> usize {
        self.local_feature_dim() + 2
    }

    /// gate feature projection input: doc features plus the global feature
    pub fn gate_feat_in_dim(&self) -> usize {
        self.gate_doc_dim() + self.global_dim
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.embed_dim == 0
            || self.local_heads == 0
            || !self.embed_dim.is_multiple_of(self.local_heads)
        {
            return Err(format!(
                "embed_dim {} must be divisible by local_heads {}",
                self.embed_dim, self.local_heads
            ));
        }
        if self.global_dim == 0
            || self.global_heads == 0
            || !self.global_dim.is_multiple_of(self.global_heads)
        {
            return Err(format!(
                "global_dim {} must be divisible by global_heads {}",
                self.global_dim, self.global_heads
            ));
        }
        if self.max_candidates < 1 {
            return Err(String::from("max_candidates must be at least 1"));
        }
        if self.local_layers == 0 && self.ablation != Ablation::NoLocal {
            return Err(String::from("local_layers must be at least 1"));
        }
        Ok(())
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// optimizer steps between validation passes; 0 means validate once per epoch
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 2e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.10,
            max_grad_norm: 1.0,
            batch_size: 8,
            accumulation_steps: 1,
            epochs: 3,
            seed: 42,
            loss: LossConfig::default(),
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size < 1 {
            return Err(String::from("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(String::from("warmup_fraction must be in [0, 1)"));
        }
        if self.accumulation_steps < 1 {
            return Err(String::from("accumulation_steps must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(String::from("epochs must be at least 1"));
        }
        self.loss.validate().map_err(|e| format!("{e}"))
    }
}
