//! A small 3D layer library with explicit backward passes.
//!
//! Layers expose two forward paths: `forward` (evaluation, takes `&self`, no
//! caching, batch norm uses running statistics) and `forward_train` (caches
//! what `backward` needs, batch norm uses batch statistics). `backward`
//! accumulates parameter gradients and returns the gradient of the input.

mod act;
mod blocks;
mod conv;
mod init;
mod norm;
mod pool;
mod tensor;
mod upsample;

pub use act::{Activation, ActivationKind};
pub use blocks::{ConvBnAct, InvertedResidual, MixedBlock, SepConvBlock};
pub use conv::{dense_conv3d, inflate_2d_to_3d, separable_conv3d, Conv3d, ConvSpec, Kernel2d, Kernel3d};
pub use init::{kaiming_normal, standard_normal};
pub use norm::BatchNorm3d;
pub use pool::MaxPool3d;
pub use tensor::{Param, Tensor};
pub use upsample::{linear_upsample_weights, Upsample};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// Hierarchically named access to parameters and buffers.
pub trait Module {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}
