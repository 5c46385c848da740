use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::ScreenPose;
use crate::pseudolabel::OriginMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub main: f64,
    pub flip: f64,
    pub unc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            main: 1.0,
            flip: 0.4,
            unc: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Labelled samples drawn from the train split.
    pub n_samples: usize,
    /// Jitter variants used per sample by the uncertainty loss.
    pub n_jitter: usize,
    pub epochs: u32,
    pub lr_init: f64,
    pub warmup_epochs: u32,
    pub lr_after_decay: f64,
    /// Last epoch trained at `lr_init`.
    pub decay_epoch: u32,
    pub w_main: f64,
    pub w_flip: f64,
    pub w_unc: f64,
    pub seed: u64,
    /// Full-batch optimiser steps per epoch; pseudo-labels and `T` are
    /// refreshed before every step.
    pub steps_per_epoch: u32,
    /// The optimiser sees `t / translation_scale_mm`, so one Adam step moves
    /// the translation by up to `lr · translation_scale_mm` millimetres.
    pub translation_scale_mm: f64,
    pub use_alignment: bool,
    /// Hold pseudo-labels constant for a whole epoch instead of regenerating
    /// them at every step and differentiating through them.
    pub detach_pseudo_labels: bool,
    pub origin_mode: OriginMode,
    /// When false the pose stays at `init_pose` and only the adapter learns.
    pub learn_pose: bool,
    pub init_pose: ScreenPose,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            n_jitter: 4,
            epochs: 80,
            lr_init: 0.001,
            warmup_epochs: 5,
            lr_after_decay: 0.0005,
            decay_epoch: 60,
            w_main: 1.0,
            w_flip: 0.4,
            w_unc: 0.25,
            seed: 0,
            steps_per_epoch: 50,
            translation_scale_mm: 300.0,
            use_alignment: true,
            detach_pseudo_labels: false,
            origin_mode: OriginMode::Keep,
            learn_pose: true,
            init_pose: ScreenPose::identity(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            main: self.w_main,
            flip: self.w_flip,
            unc: self.w_unc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_samples == 0 || self.n_jitter == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("n_samples, n_jitter, epochs and steps_per_epoch must be positive".into());
        }
        for (name, x) in [
            ("lr_init", self.lr_init),
            ("lr_after_decay", self.lr_after_decay),
            ("translation_scale_mm", self.translation_scale_mm),
            ("adam_eps", self.adam_eps),
            ("w_main", self.w_main),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {x}"));
            }
        }
        for (name, x) in [("w_flip", self.w_flip), ("w_unc", self.w_unc)] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("{name} must be non-negative and finite, got {x}"));
            }
        }
        for (name, x) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&x) {
                return bad(format!("{name} must lie in [0, 1), got {x}"));
            }
        }
        if self.decay_epoch >= self.epochs {
            return bad(format!(
                "decay_epoch ({}) must be below epochs ({})",
                self.decay_epoch, self.epochs
            ));
        }
        if self.warmup_epochs > self.decay_epoch {
            return bad("warmup_epochs must not exceed decay_epoch".into());
        }
        if !self.init_pose.is_finite() {
            return bad("init_pose must be finite".into());
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch: linear warmup, plateau, then decay.
    pub fn lr_schedule(&self, epoch: u32) -> f64 {
        if epoch <= self.warmup_epochs {
            self.lr_init * epoch as f64 / self.warmup_epochs as f64
        } else if epoch <= self.decay_epoch {
            self.lr_init
        } else {
            self.lr_after_decay
        }
    }
}

/// Temporal weight `(t − 1)/t` of the variance term.
pub fn tau(epoch: u32) -> f64 {
    (epoch as f64 - 1.0) / epoch as f64
}
