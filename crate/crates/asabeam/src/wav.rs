//! RIFF WAV input (float32 or PCM16) and float32 output.

use std::path::Path;

use asabeam_core::dsp::AudioBuffer;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{AppError, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| AppError::io(path, e))?;
    let spec = reader.spec();
    let c = spec.channels as usize;
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AppError::io(path, e))?,
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AppError::io(path, e))?,
        (fmt, bits) => {
            return Err(AppError::format(
                path,
                format!("unsupported sample format {:?} with {} bits", fmt, bits),
            ))
        }
    };
    let frames = samples.len() / c.max(1);
    let channels = (0..c).map(|ch| (0..frames).map(|i| samples[i * c + ch]).collect()).collect();
    Ok(AudioBuffer::new(spec.sample_rate, channels)?)
}

/// Writes interleaved 32-bit float samples.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| AppError::io(path, e))?;
    for i in 0..audio.len() {
        for ch in audio.channels() {
            w.write_sample(ch[i] as f32).map_err(|e| AppError::io(path, e))?;
        }
    }
    w.finalize().map_err(|e| AppError::io(path, e))
}

/// Rounds every sample to the nearest float32, as a float32 WAV would.
pub fn quantize_f32(audio: &AudioBuffer) -> AudioBuffer {
    let ch = audio
        .channels()
        .iter()
        .map(|c| c.iter().map(|v| *v as f32 as f64).collect())
        .collect();
    AudioBuffer::new(audio.sample_rate(), ch).expect("same shape")
}
