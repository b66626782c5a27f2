//! Small bottleneck-block CNN with inference, hand-written gradients and
//! an Adam training loop.

mod model;
pub mod ops;
mod tensor;
#[cfg(test)]
pub(crate) mod testref;
mod train;

pub use model::{
    build_malite_mn, image_to_tensor, stack, Bottleneck, BottleneckSpec, ConvSpec, MaliteMn,
    NetConfig, Param, TensorMap,
};
pub use tensor::{NoTally, Tally, Tensor};
pub use train::{epoch_order, fit, train_step, Adam, TrainConfig};
