//! STFT analysis and overlap-add synthesis.

mod fft;
mod stft;

pub use fft::{convolve, Fft};
pub use stft::{hann_periodic, istft, stft, AudioBuffer, IstftMap, Spectrogram, StftConfig};
