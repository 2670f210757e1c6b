//! Layer kernels with explicit forward and backward passes.

mod conv;
mod dense;
mod loss;
mod pad;
mod pool;
mod rnn;
mod spatial_softmax;

pub use conv::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, ConvGrads, ConvLayer, PadMode,
};
pub use dense::{
    dense_backward, dense_forward, softmax_backward, softmax_forward, tanh_backward, tanh_forward,
    Dense, DenseGrads,
};
pub use loss::{cross_entropy, cross_entropy_grad_logits};
pub use pad::{pad_logpolar, pad_logpolar_backward};
pub use pool::{
    global_avgpool_backward, global_avgpool_forward, maxpool2x2_backward, maxpool2x2_forward,
    MaxPoolOutput,
};
pub use rnn::{rnn_step_backward, rnn_step_forward, RnnCell, RnnGrads};
pub use spatial_softmax::{
    spatial_softmax_backward, spatial_softmax_readout, strided_coord_grid, PhiReadout,
};
