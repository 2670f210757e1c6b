//! The glimpse network: parameters, unrolled passes and checkpoints.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC,
};
pub use network::{
    aggregate_loss_backward, backbone_forward, classify, forward_aggregate, forward_greedy,
    greedy_loss_backward, localise, localise_backward, localise_readout, BackboneOutput, Retina,
    SaccadeState, SaccadeTrace, TAP_STRIDE,
};
pub use params::{ModelConfig, ModelParams, PARAM_NAMES};
