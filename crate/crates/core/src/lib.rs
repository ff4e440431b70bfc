//! Volumetric segmentation with hierarchical multi-scale decoding.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every piece of the
//! pipeline that is pure computation:
//!
//! * [`volume`]: dense `(channel, x, y, z)` volumes, masks and index-space ops.
//! * [`preprocess`] and [`phantom`]: scan records, reorientation, resampling,
//!   intensity normalization, edge-preserving smoothing, synthetic phantoms.
//! * [`nn`]: a small 3D layer library with hand-written backward passes.
//! * [`model`]: the encoder, the four parallel decoders and the fusion head.
//! * [`loss`]: the multi-part soft Dice objective and its gradient.
//! * [`augment`], [`folds`], [`train`], [`crossval`]: the training harness.
//! * [`infer`]: sliding-window inference with overlap averaging.
//! * [`metrics`]: DSC / PPV / sensitivity and fold reports.
//!
//! File formats, checkpoints and the command line live in the `hierseg` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod augment;
pub mod crossval;
mod error;
pub mod folds;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod preprocess;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Axis, BinaryMask, Volume, VoxelBox};
