//! File formats, checkpoints, configuration and the command-line front end
//! for [`hierseg_core`].
//!
//! * [`nifti_io`]: NIfTI-1 scans and masks.
//! * [`checkpoint`]: safetensors training state.
//! * [`config`]: layered TOML run configuration.
//! * [`pipeline`]: on-disk preprocessing with a hashed manifest.
//! * [`report`] and [`montage`]: CSV reports and PNG slice montages.
//! * [`commands`] and [`cli`]: the `hierseg` verbs.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod montage;
pub mod nifti_io;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
