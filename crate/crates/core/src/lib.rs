//! Volumetric brain-tissue segmentation with a 3-D densely connected network.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense `f32`/`f64` tensors and a reverse-mode tape.
//! * [`nn`]: convolution, batch norm, ReLU, dropout, up-sampling, softmax, loss.
//! * [`arch`]: the network topology, its parameters, auditing and checkpoints.
//! * [`train`]: normalization, patch sampling, initialization, Adam, the loop.
//! * [`eval`]: sliding-window voting inference and DSC / MHD / ASD metrics.
//! * [`io`]: VVOL volumes, dataset manifests and synthetic phantoms.

pub mod arch;
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod real;
pub mod registry;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod volume;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;
