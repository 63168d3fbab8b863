//! Signal-processing primitives shared by every stage.

mod audio;
pub mod convolve;
pub mod filterbank;
pub mod fir;
pub mod mel;
pub mod spectrum;

pub use audio::{read_wav, write_wav, AudioBuffer, WavFormat};
pub use convolve::{convolve, convolve_fir};
pub use filterbank::{octave_filterbank, octave_filterbank_centers, OctaveFilter};
pub use fir::{design_fir_gains, design_fir_gains_with_shelf, design_fir_nodes, FirFilter, Shelf};
pub use mel::{canonical_features, log_mel_features, Spectrogram};
