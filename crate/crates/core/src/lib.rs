//! Room reverberation and equalization toolkit.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod analysis;
pub mod augment;
pub mod bands;
pub mod dataset;
pub mod dsp;
pub mod geo;
pub mod matopt;
mod error;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod synthetic;

pub use analysis::{compute_drr, estimate_t60, extract_eq, Drr, ImpulseResponse};
pub use bands::{BandProfile, BandSet};
pub use dsp::AudioBuffer;
pub use error::{Error, Result};
