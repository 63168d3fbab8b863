use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniformly sampled mono signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is {}", samples[i])));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    /// Builds a buffer from samples the caller guarantees to be finite.
    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::from_trusted(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Samples `[start, start + len)`, zero-padded past the end.
    pub fn segment(&self, start: usize, len: usize) -> Self {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let n = len.min(self.samples.len() - start);
            out[..n].copy_from_slice(&self.samples[start..start + n]);
        }
        Self::from_trusted(out, self.sample_rate)
    }

    /// Prepends `n` zeros.
    pub fn delayed(&self, n: usize) -> Self {
        let mut out = vec![0.0; n + self.samples.len()];
        out[n..].copy_from_slice(&self.samples);
        Self::from_trusted(out, self.sample_rate)
    }

    /// Band-limited resampling by spectral truncation or zero-extension.
    pub fn resampled(&self, target_rate: u32) -> Result<Self> {
        if target_rate == 0 {
            return Err(Error::InvalidInput("target sample rate must be positive".into()));
        }
        if target_rate == self.sample_rate || self.samples.is_empty() {
            return Ok(Self::from_trusted(self.samples.clone(), target_rate));
        }
        let n_in = self.samples.len();
        let n_out = ((n_in as u64 * target_rate as u64 + self.sample_rate as u64 / 2)
            / self.sample_rate as u64)
            .max(1) as usize;
        let spec = super::spectrum::rfft(&self.samples, n_in);
        let keep = spec.len().min(n_out / 2 + 1);
        let mut out_spec = vec![rustfft::num_complex::Complex::new(0.0, 0.0); n_out / 2 + 1];
        out_spec[..keep].copy_from_slice(&spec[..keep]);
        let mut out = super::spectrum::irfft(&out_spec, n_out);
        let scale = n_out as f64 / n_in as f64;
        out.iter_mut().for_each(|s| *s *= scale);
        Ok(Self::from_trusted(out, target_rate))
    }
}

/// Sample encoding for WAV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a WAV file, downmixing to mono by channel averaging.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a mono WAV file. PCM output is clipped to full scale.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in buffer.samples() {
        match format {
            WavFormat::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(v).map_err(wav_err)?;
            }
            WavFormat::Float32 => writer.write_sample(s as f32).map_err(wav_err)?,
        }
    }
    writer.finalize().map_err(wav_err)
}
