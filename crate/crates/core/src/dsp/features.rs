use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{mel_filterbank, stft_magnitude, Waveform, SAMPLE_RATE};
use crate::error::{bail_arg, Error, Result};
use crate::tensor::{dot, Tensor};

/// Clip length fed to the vocoder.
pub const VOCODER_SECONDS: f64 = 4.0;
/// Clip length fed to the classifier.
pub const CLASSIFIER_SECONDS: f64 = 5.0;
pub const CLASSIFIER_MEAN: f64 = -4.27;
pub const CLASSIFIER_STD: f64 = 4.57;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Mel energies are clamped to at least this before `ln`.
    pub log_floor: f64,
    /// Power spectrum instead of magnitude.
    pub power: bool,
    /// Reflect-pad `n_fft/2` on both ends.
    pub center: bool,
    /// `(mean, std)` applied as `(x - mean) / std` after the log.
    pub normalize: Option<(f64, f64)>,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.n_fft < 2 || self.win_length == 0 || self.win_length > self.n_fft {
            return bad(format!(
                "need 1 <= win_length ({}) <= n_fft ({}) and n_fft >= 2",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 {
            return bad("hop_length must be at least 1".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad(format!(
                "log_floor must be positive, got {}",
                self.log_floor
            ));
        }
        if let Some((_, std)) = self.normalize {
            if !(std > 0.0) {
                return bad(format!("normalization std must be positive, got {std}"));
            }
        }
        Ok(())
    }
}

/// 80-band magnitude mel conditioning the vocoder.
pub fn vocoder_config() -> FeatureConfig {
    FeatureConfig {
        sample_rate: SAMPLE_RATE,
        n_fft: 1024,
        win_length: 1024,
        hop_length: 256,
        n_mels: 80,
        fmin: 20.0,
        fmax: 8000.0,
        log_floor: 1e-5,
        power: false,
        center: false,
        normalize: None,
    }
}

/// 128-band normalized log filterbank: 25 ms window, 10 ms hop.
pub fn classifier_config() -> FeatureConfig {
    FeatureConfig {
        sample_rate: SAMPLE_RATE,
        n_fft: 1024,
        win_length: 400,
        hop_length: 160,
        n_mels: 128,
        fmin: 20.0,
        fmax: 8000.0,
        log_floor: f32::EPSILON as f64,
        power: true,
        center: true,
        normalize: Some((CLASSIFIER_MEAN, CLASSIFIER_STD)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    /// `[frames, n_mels]`.
    pub data: Tensor<f32>,
    pub config: FeatureConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.cols()
    }
}

/// `[frames, n_mels]` log mel energies under `cfg`.
pub fn log_mel(samples: &[f32], cfg: &FeatureConfig) -> Result<Tensor<f32>> {
    let spec = stft_magnitude(samples, cfg)?;
    let fb = mel_filterbank(cfg)?;
    let (frames, mels) = (spec.rows(), cfg.n_mels);
    let mut out = Vec::with_capacity(frames * mels);
    for f in 0..frames {
        let row = spec.row(f);
        for m in 0..mels {
            let mut v = dot(fb.row(m), row).max(cfg.log_floor).ln();
            if let Some((mean, std)) = cfg.normalize {
                v = (v - mean) / std;
            }
            out.push(v as f32);
        }
    }
    Tensor::new(&[frames, mels], out)
}

fn check_rate(w: &Waveform, cfg: &FeatureConfig) -> Result<()> {
    if w.sample_rate != cfg.sample_rate {
        bail_arg!(
            "expected {} Hz audio, got {} Hz; resample first",
            cfg.sample_rate,
            w.sample_rate
        );
    }
    Ok(())
}

pub fn vocoder_mel(w: &Waveform) -> Result<MelSpectrogram> {
    let config = vocoder_config();
    check_rate(w, &config)?;
    Ok(MelSpectrogram {
        data: log_mel(&w.samples, &config)?,
        config,
    })
}

pub fn classifier_features(w: &Waveform) -> Result<Tensor<f32>> {
    let cfg = classifier_config();
    check_rate(w, &cfg)?;
    log_mel(&w.samples, &cfg)
}

/// Which feature pipeline a cache file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Vocoder,
    Classifier,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Vocoder => "vocoder",
            Pipeline::Classifier => "classifier",
        }
    }

    pub fn config(self) -> FeatureConfig {
        match self {
            Pipeline::Vocoder => vocoder_config(),
            Pipeline::Classifier => classifier_config(),
        }
    }

    pub fn seconds(self) -> f64 {
        match self {
            Pipeline::Vocoder => VOCODER_SECONDS,
            Pipeline::Classifier => CLASSIFIER_SECONDS,
        }
    }

    /// `<sample_id>.<pipeline>.rsf`
    pub fn cache_name(self, sample_id: &str) -> String {
        format!("{sample_id}.{}.rsf", self.name())
    }

    /// Full-length features for `w`, after fixing its duration.
    pub fn extract(self, w: &Waveform) -> Result<Tensor<f32>> {
        let w = super::fix_duration(w, self.seconds())?;
        match self {
            Pipeline::Vocoder => Ok(vocoder_mel(&w)?.data),
            Pipeline::Classifier => classifier_features(&w),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vocoder" => Ok(Pipeline::Vocoder),
            "classifier" => Ok(Pipeline::Classifier),
            other => Err(Error::Argument(format!(
                "unknown pipeline {other:?}; expected vocoder or classifier"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tone(seconds: f64, amp: f32) -> Waveform {
        let n = (seconds * 16000.0) as usize;
        let s = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                amp * ((2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.3 * (2.0 * std::f64::consts::PI * 2300.0 * t).sin())
                    as f32
                    / 1.3
            })
            .collect();
        Waveform::new(s, 16000).unwrap()
    }

    #[test]
    fn vocoder_shapes_and_floor() {
        let m = vocoder_mel(&tone(4.0, 0.5)).unwrap();
        assert_eq!(m.data.shape(), &[250, 80]);
        let silent = vocoder_mel(&Waveform::new(vec![0.0; 64000], 16000).unwrap()).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(silent.data.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn louder_input_never_lowers_mel() {
        let quiet = vocoder_mel(&tone(4.0, 0.2)).unwrap();
        let loud = vocoder_mel(&tone(4.0, 0.6)).unwrap();
        for (a, b) in quiet.data.data().iter().zip(loud.data.data()) {
            assert!(b >= a);
        }
    }

    #[test]
    fn wrong_rate_is_rejected() {
        let w = Waveform::new(vec![0.0; 44100], 44100).unwrap();
        assert!(matches!(vocoder_mel(&w), Err(Error::Argument(_))));
        assert!(matches!(classifier_features(&w), Err(Error::Argument(_))));
    }

    #[test]
    fn classifier_shape_and_silence() {
        let f = classifier_features(&tone(5.0, 0.5)).unwrap();
        assert_eq!(f.shape(), &[501, 128]);
        let s = classifier_features(&Waveform::new(vec![0.0; 80000], 16000).unwrap()).unwrap();
        let first = s.row(0).to_vec();
        for r in 0..s.rows() {
            assert_eq!(s.row(r), &first[..]);
        }
    }

    #[test]
    fn normalization_is_affine() {
        let w = tone(5.0, 0.5);
        let raw_cfg = FeatureConfig {
            normalize: None,
            ..classifier_config()
        };
        let raw = log_mel(&w.samples, &raw_cfg).unwrap();
        let norm = classifier_features(&w).unwrap();
        for (r, n) in raw.data().iter().zip(norm.data()) {
            let expected = (*r as f64 + 4.27) / 4.57;
            assert!((*n as f64 - expected).abs() < 1e-5);
        }
        // A log-mel value of exactly the mean maps to zero.
        assert_eq!((CLASSIFIER_MEAN - CLASSIFIER_MEAN) / CLASSIFIER_STD, 0.0);
        let a = raw.data()[1000] as f64;
        let b = raw.data()[2000] as f64;
        let da = norm.data()[1000] as f64 - norm.data()[2000] as f64;
        assert!((da - (a - b) / 4.57).abs() < 1e-5);
    }

    #[test]
    fn config_validation() {
        let ok = vocoder_config();
        ok.validate().unwrap();
        for bad in [
            FeatureConfig {
                win_length: 2048,
                ..ok.clone()
            },
            FeatureConfig {
                hop_length: 0,
                ..ok.clone()
            },
            FeatureConfig {
                fmin: 9000.0,
                ..ok.clone()
            },
            FeatureConfig {
                fmax: 8001.0,
                ..ok.clone()
            },
            FeatureConfig {
                log_floor: 0.0,
                ..ok.clone()
            },
            FeatureConfig {
                normalize: Some((0.0, 0.0)),
                ..ok.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn pipeline_names() {
        assert_eq!(
            Pipeline::Vocoder.cache_name("101_1b1_Al"),
            "101_1b1_Al.vocoder.rsf"
        );
        assert_eq!(
            "classifier".parse::<Pipeline>().unwrap(),
            Pipeline::Classifier
        );
        assert!("mfcc".parse::<Pipeline>().is_err());
        let short = tone(1.0, 0.3);
        assert_eq!(
            Pipeline::Vocoder.extract(&short).unwrap().shape(),
            &[250, 80]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn features_are_finite(samples in proptest::collection::vec(-1.0f32..=1.0, 1024..6000)) {
            let w = Waveform::new(samples, 16000).unwrap();
            prop_assert!(vocoder_mel(&w).unwrap().data.is_finite());
            prop_assert!(classifier_features(&w).unwrap().is_finite());
        }
    }
}
