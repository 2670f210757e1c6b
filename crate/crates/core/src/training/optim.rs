use super::config::{OptimizerKind, TrainConfig};
use crate::model::{Checkpoint, CheckpointError, ModelParams, PARAM_NAMES};
use crate::tensor::Tensor;

const FIRST_MOMENT: &str = "optim.m.";
const SECOND_MOMENT: &str = "optim.v.";
const STEP_RECORD: &str = "optim.step";

/// Adam or SGD with momentum over a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    /// Velocity for SGD, first moment for Adam.
    first: ModelParams<f32>,
    /// Second moment, Adam only.
    second: ModelParams<f32>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ModelParams<f32>) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.lr,
            momentum: cfg.momentum,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from a (reduced) gradient.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>) {
        self.step += 1;
        let t = self.step as f64;
        let (bc1, bc2) = (1.0 - self.beta1.powf(t), 1.0 - self.beta2.powf(t));
        let lr = self.lr;
        let wd = self.weight_decay;
        let p_iter = params.tensors_mut().into_iter();
        let g_iter = grads.tensors().into_iter();
        let m_iter = self.first.tensors_mut().into_iter();
        let v_iter = self.second.tensors_mut().into_iter();
        for (((p, g), m), v) in p_iter.zip(g_iter).zip(m_iter).zip(v_iter) {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                let grad = f64::from(g[k]) + wd * f64::from(p[k]);
                match self.kind {
                    OptimizerKind::SgdMomentum => {
                        let vel = self.momentum * f64::from(m[k]) + grad;
                        m[k] = vel as f32;
                        p[k] = (f64::from(p[k]) - lr * vel) as f32;
                    }
                    OptimizerKind::Adam => {
                        let m1 = self.beta1 * f64::from(m[k]) + (1.0 - self.beta1) * grad;
                        let m2 = self.beta2 * f64::from(v[k]) + (1.0 - self.beta2) * grad * grad;
                        m[k] = m1 as f32;
                        v[k] = m2 as f32;
                        let update = lr * (m1 / bc1) / ((m2 / bc2).sqrt() + self.eps);
                        p[k] = (f64::from(p[k]) - update) as f32;
                    }
                }
            }
        }
    }

    /// Adds the optimizer state to a checkpoint.
    pub fn save_into(&self, ck: &mut Checkpoint) -> Result<(), CheckpointError> {
        for (name, t) in self.first.named_tensors() {
            ck.push(format!("{FIRST_MOMENT}{name}"), t.clone())?;
        }
        if self.kind == OptimizerKind::Adam {
            for (name, t) in self.second.named_tensors() {
                ck.push(format!("{SECOND_MOMENT}{name}"), t.clone())?;
            }
        }
        ck.push(STEP_RECORD, encode_u64(self.step))
    }

    /// Restores state written by [`Optimizer::save_into`]; hyperparameters
    /// come from `cfg`.
    pub fn restore(
        cfg: &TrainConfig,
        params: &ModelParams<f32>,
        ck: &Checkpoint,
    ) -> Result<Self, CheckpointError> {
        let mut opt = Self::new(cfg, params);
        let missing =
            |n: String| CheckpointError::Corrupt(format!("missing optimizer record {n:?}"));
        let load = |prefix: &str, into: &mut ModelParams<f32>| -> Result<(), CheckpointError> {
            for name in PARAM_NAMES {
                let key = format!("{prefix}{name}");
                let t = ck.get(&key).ok_or_else(|| missing(key.clone()))?;
                let slot = into.get_mut(name).expect("known name");
                if slot.shape() != t.shape() {
                    return Err(CheckpointError::Corrupt(format!(
                        "{key} has shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
            }
            Ok(())
        };
        load(FIRST_MOMENT, &mut opt.first)?;
        if opt.kind == OptimizerKind::Adam {
            load(SECOND_MOMENT, &mut opt.second)?;
        }
        opt.step = decode_u64(
            ck.get(STEP_RECORD)
                .ok_or_else(|| missing(STEP_RECORD.into()))?,
        )?;
        Ok(opt)
    }
}

/// Integers travel as four 16-bit limbs, each exact in an f32.
pub fn encode_u64(v: u64) -> Tensor<f32> {
    Tensor::from_fn(&[4], |k| ((v >> (16 * k)) & 0xffff) as f32)
}

pub fn decode_u64(t: &Tensor<f32>) -> Result<u64, CheckpointError> {
    let bad = || CheckpointError::Corrupt("malformed integer record".into());
    if t.shape() != [4] {
        return Err(bad());
    }
    let mut v = 0u64;
    for (k, &limb) in t.data().iter().enumerate() {
        if !(0.0..=65535.0).contains(&limb) || limb.fract() != 0.0 {
            return Err(bad());
        }
        v |= (limb as u64) << (16 * k);
    }
    Ok(v)
}

/// Global L2 norm of all gradient tensors.
pub fn grad_norm(grads: &ModelParams<f32>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&g| f64::from(g) * f64::from(g))
        .sum::<f64>()
        .sqrt()
}
