//! Two-stream depth + edge convolutional networks for 3D fingertip and palm
//! regression.
//!
//! The crate is self-contained: a dense tensor type with hand-written
//! forward/backward layer primitives ([`layers`]), SGD with momentum
//! ([`optim`]), finite-difference gradient verification ([`gradcheck`]), the
//! network variants ([`netzoo`]), an edge-image extractor ([`edges`]), depth
//! cropping plus a synthetic labelled hand generator ([`data`]), and the
//! training/evaluation/benchmark harness ([`train`], [`eval`], [`bench`]).

pub mod bench;
mod binio;
pub mod data;
pub mod edges;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod netzoo;
pub mod optim;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use netzoo::{build, ArchId, BuildOptions, Checkpoint, Network};
pub use tensor::{Real, Tensor};
