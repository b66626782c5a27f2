//! Lightweight malware classification toolkit.
//!
//! Turns arbitrary binaries into byteplot images and classifies them with
//! one of two deliberately small models:
//!
//! - **HRF**: sliding-window patch histograms fed to a bounded random
//!   forest (ultra lightweight, no training on device required).
//! - **MN**: a small CNN built from inverted bottleneck residual blocks,
//!   trained with Adam and a warmup + quarter-period cosine schedule.
//!
//! An analytic cost model ([`costmodel`]) accounts for parameters,
//! multiply-add operations and serialized size of every model, and the
//! [`harness`] module ties everything together: metrics, a versioned model
//! container, the HRF parameter sweep and dataset handling.

pub mod byteplot;
pub mod costmodel;
pub mod data;
mod error;
pub mod featurizer;
pub mod forest;
pub mod harness;
pub mod net;
pub mod parallel;

pub use error::{Error, Result};
