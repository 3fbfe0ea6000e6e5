use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::EvolutionMode;
use crate::semantic::PromptMode;

/// Model wiring: the ablation ladder, the full model, and the
/// semantic-only variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single undecoupled ODE state.
    V1,
    /// Long/short states with the fusion gate.
    V2,
    /// V2 plus the semantic branch.
    V3,
    /// V3 plus the counterfactual objective.
    V4,
    /// Full model with raw durations in prompts.
    V5,
    Full,
    TitleOnly,
    TitleTime,
    CfEnhance,
}

impl Variant {
    pub const ABLATION: [Variant; 6] =
        [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5, Variant::Full];
    pub const SEMANTIC_ONLY: [Variant; 3] = [Variant::TitleOnly, Variant::TitleTime, Variant::CfEnhance];
    pub const ALL: [Variant; 9] = [
        Variant::V1,
        Variant::V2,
        Variant::V3,
        Variant::V4,
        Variant::V5,
        Variant::Full,
        Variant::TitleOnly,
        Variant::TitleTime,
        Variant::CfEnhance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
            Variant::V5 => "v5",
            Variant::Full => "full",
            Variant::TitleOnly => "title_only",
            Variant::TitleTime => "title_time",
            Variant::CfEnhance => "cf_enhance",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::V1 => "Single-ODE",
            Variant::V2 => "Dual LS-ODE",
            Variant::V3 => "+Semantic",
            Variant::V4 => "+CF-Enhance",
            Variant::V5 => "Exact-time",
            Variant::Full => "Full",
            Variant::TitleOnly => "Title-only",
            Variant::TitleTime => "Title+Time",
            Variant::CfEnhance => "+CF-Enhance",
        }
    }

    /// Behavioral branch present (everything except the semantic-only variants).
    pub fn behavioral(self) -> bool {
        !Variant::SEMANTIC_ONLY.contains(&self)
    }

    pub fn evolution_mode(self) -> EvolutionMode {
        if self == Variant::V1 {
            EvolutionMode::Single
        } else {
            EvolutionMode::Dual
        }
    }

    pub fn semantic(self) -> bool {
        !matches!(self, Variant::V1 | Variant::V2)
    }

    pub fn counterfactual(self) -> bool {
        matches!(self, Variant::V4 | Variant::V5 | Variant::Full | Variant::CfEnhance)
    }

    /// Temporal regularizers on the evolution states.
    pub fn ode_regularizers(self) -> bool {
        self.behavioral() && self != Variant::V1
    }

    /// Personalized transfer weights; earlier ablation steps learn one
    /// weight per domain instead.
    pub fn guided_transfer(self) -> bool {
        matches!(self, Variant::V5 | Variant::Full)
    }

    pub fn prompt_mode(self) -> PromptMode {
        match self {
            Variant::V5 => PromptMode::ExactTime,
            Variant::TitleOnly => PromptMode::TitleOnly,
            _ => PromptMode::Tokens,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let key = if key == "exact_time" { "v5".to_string() } else { key };
        Variant::ALL.iter().copied().find(|v| v.name() == key).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?}; valid names: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
/// Missing fields take the published defaults.
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub lambda_ode: f64,
    pub lambda_sem: f64,
    /// Temperature of the short-term contrastive alignment.
    pub tau_short: f64,
    /// Temperature of the counterfactual ranking objective.
    pub tau_cf: f64,
    pub alpha_small: f64,
    pub alpha_big: f64,
    pub top_k: usize,
    pub d_mid: usize,
    pub gap_scale: f64,
    pub gap_buckets: usize,
    pub abs_time_slots: usize,
    pub num_negatives: usize,
    /// Upper bound on pooled steps in the short-term contrastive loss.
    pub short_pool_cap: usize,
    /// Pattern encoder reuses the relative-time table.
    pub share_pattern_gaps: bool,
    /// Dropout on the behavioral embeddings and encoder outputs during training.
    pub dropout: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            heads: 2,
            max_len: 50,
            batch_size: 256,
            epochs: 100,
            patience: 10,
            lr: 0.0005,
            lambda_ode: 0.01,
            lambda_sem: 0.001,
            tau_short: 0.2,
            tau_cf: 0.2,
            alpha_small: 0.3,
            alpha_big: 0.3,
            top_k: 5,
            d_mid: 512,
            gap_scale: 2.0,
            gap_buckets: 64,
            abs_time_slots: 512,
            num_negatives: 999,
            short_pool_cap: 2048,
            share_pattern_gaps: false,
            dropout: 0.0,
            variant: Variant::Full,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Scaled-down settings for the synthetic experiments on one CPU core.
    pub fn desk() -> Self {
        Self {
            dim: 32,
            max_len: 20,
            batch_size: 32,
            epochs: 40,
            patience: 5,
            lr: 0.002,
            d_mid: 32,
            num_negatives: 99,
            dropout: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("top_k", self.top_k),
            ("d_mid", self.d_mid),
            ("gap_buckets", self.gap_buckets),
            ("abs_time_slots", self.abs_time_slots),
            ("num_negatives", self.num_negatives),
            ("short_pool_cap", self.short_pool_cap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config("dim must be divisible by heads".into()));
        }
        if self.lr < 0.0 || self.lambda_ode < 0.0 || self.lambda_sem < 0.0 {
            return Err(Error::Config("lr and loss weights must be nonnegative".into()));
        }
        if self.tau_short <= 0.0 || self.tau_cf <= 0.0 || self.gap_scale <= 0.0 {
            return Err(Error::Config("temperatures and gap_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        for a in [self.alpha_small, self.alpha_big] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("perturbation probabilities must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
