//! Volumetric super-resolution toolkit.
//!
//! * [`volume`]: volumes, normalization, axis resampling and training-window
//!   extraction.
//! * [`arch`]: SRCNN, EDSR and ESRGAN in 2D, 2.5D and 3D form, with exact
//!   parameter accounting.
//! * [`phantom`]: paired synthetic volumes with ground-truth pores.
//! * [`train`]: losses and training loops.
//! * [`slidewin`]: sliding-window volume assembly and activation-memory
//!   estimates.
//! * [`eval`]: slice PSNR and size-binned defect detection metrics.

pub mod arch;
mod error;
pub mod eval;
pub mod experiment;
pub mod phantom;
pub mod seeds;
pub mod slidewin;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
