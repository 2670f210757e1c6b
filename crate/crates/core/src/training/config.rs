use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::GridSpec;
use crate::model::Retina;
use crate::nnops::PhiReadout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(format!(
                "unknown optimizer {s:?} (expected adam or sgd_momentum)"
            )),
        }
    }
}

/// Where evaluation places the first fixation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCenter {
    ImageCenter,
    /// Drawn like training centers from the evaluation seed.
    Random,
}

impl FromStr for EvalCenter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "center" | "image_center" => Ok(EvalCenter::ImageCenter),
            "random" => Ok(EvalCenter::Random),
            _ => Err(format!(
                "unknown eval center {s:?} (expected center or random)"
            )),
        }
    }
}

/// Input augmentations; `None` disables an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentations {
    /// Horizontal flip with probability one half.
    pub flip: bool,
    /// Zoom factor range about the image center.
    pub zoom: Option<(f64, f64)>,
    /// Hue rotation amplitude in turns. Color entries apply to 3-channel
    /// inputs only.
    pub hue: Option<f64>,
    pub saturation: Option<(f64, f64)>,
    pub brightness: Option<(f64, f64)>,
    pub contrast: Option<(f64, f64)>,
}

impl Augmentations {
    pub fn none() -> Self {
        Self {
            flip: false,
            zoom: None,
            hue: None,
            saturation: None,
            brightness: None,
            contrast: None,
        }
    }

    /// Flip, zoom in `[0.9, 1.1]` and the four color jitters.
    pub fn full() -> Self {
        Self {
            flip: true,
            zoom: Some((0.9, 1.1)),
            hue: Some(0.05),
            saturation: Some((0.8, 1.2)),
            brightness: Some((0.8, 1.2)),
            contrast: Some((0.8, 1.2)),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }
}

impl Default for Augmentations {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Step decay: the rate is multiplied by `lr_decay` every
    /// `lr_decay_every` epochs; 0 keeps it constant.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Gradient norm cap; `None` leaves gradients untouched.
    pub clip_norm: Option<f64>,
    /// Multiplier of the greedy objective in the joint loss.
    pub lambda_greedy: f64,
    /// Leading epochs that train the greedy objective alone.
    pub greedy_only_epochs: usize,
    pub saccades: usize,
    pub seed: u64,
    pub augment: Augmentations,
    pub patch: usize,
    pub r_min: f64,
    /// Image diagonal when `None`.
    pub r_max: Option<f64>,
    pub init_margin: f64,
    pub phi_readout: PhiReadout,
    pub eval_center: EvalCenter,
    /// One worker and an ordered reduction.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            lr: 1e-3,
            lr_decay: 1.0,
            lr_decay_every: 0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: None,
            lambda_greedy: 1.0,
            greedy_only_epochs: 0,
            saccades: 4,
            seed: 0,
            augment: Augmentations::none(),
            patch: 32,
            r_min: 1.0,
            r_max: None,
            init_margin: 0.25,
            phi_readout: PhiReadout::Circular,
            eval_center: EvalCenter::ImageCenter,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            bad.push(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be at least 1".to_string());
        }
        if self.saccades == 0 {
            bad.push("saccades must be at least 1".to_string());
        }
        if !(self.lambda_greedy >= 0.0 && self.lambda_greedy.is_finite()) {
            bad.push(format!(
                "lambda_greedy must be >= 0, got {}",
                self.lambda_greedy
            ));
        }
        if !(0.0..0.5).contains(&self.init_margin) {
            bad.push(format!(
                "init_margin must lie in [0, 0.5), got {}",
                self.init_margin
            ));
        }
        if let Some((lo, hi)) = self.augment.zoom {
            if !(lo > 0.0 && lo <= hi && hi <= 2.0) {
                bad.push(format!("zoom range must lie in (0, 2], got ({lo}, {hi})"));
            }
        }
        if self.patch < 8 || !self.patch.is_multiple_of(8) {
            bad.push(format!(
                "patch must be a positive multiple of 8, got {}",
                self.patch
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            bad.push("momentum and betas must lie in [0, 1)".to_string());
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                bad.push(format!("clip_norm must be positive, got {c}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }

    pub fn grid_spec(&self, height: usize, width: usize) -> Result<GridSpec, String> {
        let r_max = self
            .r_max
            .unwrap_or_else(|| ((height * height + width * width) as f64).sqrt());
        GridSpec::new(self.patch, self.patch, self.r_min, r_max).map_err(|e| e.to_string())
    }

    pub fn retina(&self, height: usize, width: usize) -> Result<Retina, String> {
        Retina::new(
            self.grid_spec(height, width)?,
            height,
            width,
            self.phi_readout,
        )
        .map_err(|e| e.to_string())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            0 => self.lr,
            n => self.lr * self.lr_decay.powi((epoch / n) as i32),
        }
    }

    /// Whether the aggregate objective is trained during `epoch` (0-based).
    pub fn trains_aggregate(&self, epoch: usize) -> bool {
        epoch >= self.greedy_only_epochs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let cfg = TrainConfig {
            lr: 0.01,
            lr_decay: 0.5,
            lr_decay_every: 3,
            ..TrainConfig::default()
        };
        let rates: Vec<f64> = (0..7).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(rates, [0.01, 0.01, 0.01, 0.005, 0.005, 0.005, 0.0025]);
        assert_eq!(TrainConfig::default().lr_at(50), 1e-3);
    }

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let cfg = TrainConfig {
            lr: 0.0,
            saccades: 0,
            init_margin: 0.5,
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.contains("lr") && err.contains("saccades") && err.contains("init_margin"));
        let mut cfg = TrainConfig::default();
        cfg.augment.zoom = Some((0.5, 2.5));
        assert!(cfg.validate().is_err());
    }
}
