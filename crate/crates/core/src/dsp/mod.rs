//! Audio ingestion and feature extraction.

mod features;
mod mel;
mod pgm;
mod resample;
mod stft;
mod wav;

pub use features::{
    classifier_config, classifier_features, log_mel, vocoder_config, vocoder_mel, FeatureConfig,
    MelSpectrogram, Pipeline, CLASSIFIER_MEAN, CLASSIFIER_SECONDS, CLASSIFIER_STD, VOCODER_SECONDS,
};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use pgm::{encode_pgm, read_pgm_header, spectrogram_image, write_pgm};
pub use resample::resample;
pub use stft::{frame_count, stft_magnitude};
pub use wav::{encode_wav, load_wav, parse_wav, write_wav};

use crate::error::{bail_arg, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Samples clipped to `[-1, 1]` during ingestion.
    pub clipped: usize,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            bail_arg!("sample rate must be positive");
        }
        let mut w = Waveform {
            samples,
            sample_rate,
            clipped: 0,
        };
        w.clip();
        Ok(w)
    }

    fn clip(&mut self) {
        for s in &mut self.samples {
            if !s.is_finite() {
                *s = 0.0;
                self.clipped += 1;
            } else if s.abs() > 1.0 {
                *s = s.clamp(-1.0, 1.0);
                self.clipped += 1;
            }
        }
        if self.clipped > 0 {
            log::warn!("clipped {} samples to [-1, 1]", self.clipped);
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Crop from the start, or repeat the signal cyclically, to exactly
/// `round(seconds · sample_rate)` samples.
pub fn fix_duration(w: &Waveform, seconds: f64) -> Result<Waveform> {
    if !(seconds > 0.0) {
        bail_arg!("duration must be positive, got {seconds}");
    }
    if w.is_empty() {
        bail_arg!("cannot fix the duration of an empty waveform");
    }
    let target = (seconds * w.sample_rate as f64).round() as usize;
    let samples = w.samples.iter().copied().cycle().take(target).collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
        clipped: w.clipped,
    })
}
