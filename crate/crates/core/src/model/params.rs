use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnops::{ConvLayer, Dense, RnnCell};
use crate::real::Real;
use crate::tensor::{ensure_contract, ContractViolation, Tensor};

/// Layer widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Feature maps of the three backbone blocks.
    pub conv_channels: [usize; 3],
    /// Hidden widths of the classifier; the second also sizes the recurrent
    /// state.
    pub fc_hidden: [usize; 2],
    pub loc_hidden: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Backbone 32/64/128, classifier 128/96/10, localisation 64/64/1,
    /// recurrent state 96.
    pub fn reference(in_channels: usize) -> Self {
        Self {
            in_channels,
            conv_channels: [32, 64, 128],
            fc_hidden: [128, 96],
            loc_hidden: 64,
            num_classes: 10,
        }
    }

    /// A few channels per layer; used for exhaustive gradient checks.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            in_channels,
            conv_channels: [4, 4, 4],
            fc_hidden: [5, 4],
            loc_hidden: 4,
            num_classes: 10,
        }
    }

    pub fn tap_channels(&self) -> usize {
        self.conv_channels[1]
    }

    pub fn rnn_hidden(&self) -> usize {
        self.fc_hidden[1]
    }
}

/// Every learnable tensor of the network. The same struct doubles as the
/// gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub conv3: ConvLayer<T>,
    pub fc1: Dense<T>,
    pub fc2: Dense<T>,
    pub fc3: Dense<T>,
    pub loc1: ConvLayer<T>,
    pub loc2: ConvLayer<T>,
    pub rnn: RnnCell<T>,
    pub rnn_out: Dense<T>,
}

pub const PARAM_NAMES: [&str; 21] = [
    "backbone.conv1.weight",
    "backbone.conv1.bias",
    "backbone.conv2.weight",
    "backbone.conv2.bias",
    "backbone.conv3.weight",
    "backbone.conv3.bias",
    "classifier.fc1.weight",
    "classifier.fc1.bias",
    "classifier.fc2.weight",
    "classifier.fc2.bias",
    "classifier.fc3.weight",
    "classifier.fc3.bias",
    "locnet.conv1.weight",
    "locnet.conv1.bias",
    "locnet.conv2.weight",
    "locnet.conv2.bias",
    "rnn.w_x",
    "rnn.w_h",
    "rnn.bias",
    "rnn_out.weight",
    "rnn_out.bias",
];

impl<T: Real> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let [c1, c2, c3] = cfg.conv_channels;
        let [f1, f2] = cfg.fc_hidden;
        Self {
            conv1: ConvLayer::zeros(c1, cfg.in_channels, 3),
            conv2: ConvLayer::zeros(c2, c1, 3),
            conv3: ConvLayer::zeros(c3, c2, 3),
            fc1: Dense::zeros(f1, c3),
            fc2: Dense::zeros(f2, f1),
            fc3: Dense::zeros(cfg.num_classes, f2),
            loc1: ConvLayer::zeros(cfg.loc_hidden, c2, 1),
            loc2: ConvLayer::zeros(1, cfg.loc_hidden, 1),
            rnn: RnnCell::zeros(f2, f2),
            rnn_out: Dense::zeros(cfg.num_classes, f2),
        }
    }

    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let [c1, c2, c3] = cfg.conv_channels;
        let [f1, f2] = cfg.fc_hidden;
        Self {
            conv1: ConvLayer::init(c1, cfg.in_channels, 3, rng),
            conv2: ConvLayer::init(c2, c1, 3, rng),
            conv3: ConvLayer::init(c3, c2, 3, rng),
            fc1: Dense::init(f1, c3, rng),
            fc2: Dense::init(f2, f1, rng),
            fc3: Dense::init(cfg.num_classes, f2, rng),
            loc1: ConvLayer::init(cfg.loc_hidden, c2, 1, rng),
            loc2: ConvLayer::init(1, cfg.loc_hidden, 1, rng),
            rnn: RnnCell::init(f2, f2, rng),
            rnn_out: Dense::init(cfg.num_classes, f2, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config())
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            in_channels: self.conv1.in_channels(),
            conv_channels: [
                self.conv1.out_channels(),
                self.conv2.out_channels(),
                self.conv3.out_channels(),
            ],
            fc_hidden: [self.fc1.out_dim(), self.fc2.out_dim()],
            loc_hidden: self.loc1.out_channels(),
            num_classes: self.fc3.out_dim(),
        }
    }

    /// Tensors in the fixed order of [`PARAM_NAMES`].
    pub fn tensors(&self) -> [&Tensor<T>; 21] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.fc3.weight,
            &self.fc3.bias,
            &self.loc1.weight,
            &self.loc1.bias,
            &self.loc2.weight,
            &self.loc2.bias,
            &self.rnn.w_x,
            &self.rnn.w_h,
            &self.rnn.bias,
            &self.rnn_out.weight,
            &self.rnn_out.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 21] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
            &mut self.fc3.weight,
            &mut self.fc3.bias,
            &mut self.loc1.weight,
            &mut self.loc1.bias,
            &mut self.loc2.weight,
            &mut self.loc2.bias,
            &mut self.rnn.w_x,
            &mut self.rnn.w_h,
            &mut self.rnn.bias,
            &mut self.rnn_out.weight,
            &mut self.rnn_out.bias,
        ]
    }

    pub fn named_tensors(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.named_tensors()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let idx = PARAM_NAMES.iter().position(|n| *n == name)?;
        self.tensors_mut().into_iter().nth(idx)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config());
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Builds a parameter set from named tensors; every name must be present
    /// exactly once with a shape consistent with the others.
    pub fn from_named(mut named: Vec<(String, Tensor<T>)>) -> Result<Self, ContractViolation> {
        let take = |named: &mut Vec<(String, Tensor<T>)>,
                    name: &str|
         -> Result<Tensor<T>, ContractViolation> {
            let pos = named.iter().position(|(n, _)| n == name);
            ensure_contract!(
                pos.is_some(),
                "ModelParams::from_named",
                "missing tensor '{name}'"
            );
            Ok(named.swap_remove(pos.expect("checked")).1)
        };
        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for name in PARAM_NAMES {
            tensors.push(take(&mut named, name)?);
        }
        ensure_contract!(
            named.is_empty(),
            "ModelParams::from_named",
            "unexpected tensors: {:?}",
            named.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
        );
        let w1 = tensors[0].shape();
        let w2 = tensors[2].shape();
        let w3 = tensors[4].shape();
        let fc1 = tensors[6].shape();
        let fc2 = tensors[8].shape();
        let fc3 = tensors[10].shape();
        let l1 = tensors[12].shape();
        ensure_contract!(
            w1.len() == 4
                && w2.len() == 4
                && w3.len() == 4
                && fc1.len() == 2
                && fc2.len() == 2
                && fc3.len() == 2
                && l1.len() == 4,
            "ModelParams::from_named",
            "tensor ranks do not match the architecture"
        );
        let cfg = ModelConfig {
            in_channels: w1[1],
            conv_channels: [w1[0], w2[0], w3[0]],
            fc_hidden: [fc1[0], fc2[0]],
            loc_hidden: l1[0],
            num_classes: fc3[0],
        };
        let mut params = Self::zeros(&cfg);
        for ((dst, src), name) in params
            .tensors_mut()
            .into_iter()
            .zip(tensors)
            .zip(PARAM_NAMES)
        {
            ensure_contract!(
                dst.shape() == src.shape(),
                "ModelParams::from_named",
                "'{name}' has shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            );
            *dst = src;
        }
        Ok(params)
    }
}
