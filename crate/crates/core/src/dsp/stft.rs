use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureConfig;
use crate::error::{bail_arg, Result};
use crate::tensor::Tensor;

/// Frames produced for `len` samples.
///
/// Center mode reflect-pads `n_fft/2` on both sides: `1 + len / hop`.
/// Otherwise frame `i` starts at `i · hop` and is zero-filled past the end,
/// giving `len / hop` frames so that `frames · hop == len` for whole hops.
pub fn frame_count(len: usize, cfg: &FeatureConfig) -> usize {
    if cfg.center {
        1 + len / cfg.hop_length
    } else {
        len / cfg.hop_length
    }
}

/// Periodic Hann window of `win_length`, zero-padded to `n_fft` on both sides.
fn window(cfg: &FeatureConfig) -> Vec<f64> {
    let mut w = vec![0.0; cfg.n_fft];
    let left = (cfg.n_fft - cfg.win_length) / 2;
    for i in 0..cfg.win_length {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / cfg.win_length as f64;
        w[left + i] = 0.5 - 0.5 * phase.cos();
    }
    w
}

/// Reflect `i` (relative to the signal start) into `[0, len)`.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// `[frames, n_fft/2 + 1]` magnitudes (power when `cfg.power`).
pub fn stft_magnitude(samples: &[f32], cfg: &FeatureConfig) -> Result<Tensor<f32>> {
    cfg.validate()?;
    if samples.len() < cfg.win_length {
        bail_arg!(
            "signal of {} samples is shorter than one window ({})",
            samples.len(),
            cfg.win_length
        );
    }
    let frames = frame_count(samples.len(), cfg);
    if frames == 0 {
        bail_arg!("signal of {} samples yields no frames", samples.len());
    }
    let n_fft = cfg.n_fft;
    let bins = n_fft / 2 + 1;
    let win = window(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = Vec::with_capacity(frames * bins);
    let pad = if cfg.center { (n_fft / 2) as isize } else { 0 };
    for f in 0..frames {
        let start = (f * cfg.hop_length) as isize - pad;
        for (j, slot) in buf.iter_mut().enumerate() {
            let idx = start + j as isize;
            let x = if cfg.center {
                samples[reflect(idx, samples.len())] as f64
            } else if (idx as usize) < samples.len() {
                samples[idx as usize] as f64
            } else {
                0.0
            };
            *slot = Complex::new(x * win[j], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| {
            let p = c.norm_sqr();
            (if cfg.power { p } else { p.sqrt() }) as f32
        }));
    }
    Tensor::new(&[frames, bins], out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::dsp::{classifier_config, vocoder_config};

    #[test]
    fn zero_signal_gives_zero_magnitudes() {
        let cfg = vocoder_config();
        let s = stft_magnitude(&vec![0.0; 4096], &cfg).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_centered_sine_has_single_dominant_bin() {
        let cfg = vocoder_config();
        let k = 64usize; // 64 · 16000/1024 = 1000 Hz
        let f = k as f64 * 16000.0 / 1024.0;
        let sig: Vec<f32> = (0..16000)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin() as f32)
            .collect();
        let s = stft_magnitude(&sig, &cfg).unwrap();
        for fr in 8..s.rows() - 8 {
            let row = s.row(fr);
            let peak = row[k];
            // Hann main lobe spans ±1 bin; everything past it is far below.
            for (j, &v) in row.iter().enumerate() {
                if j.abs_diff(k) >= 2 {
                    assert!(peak >= 100.0 * v, "frame {fr} bin {j}: {peak} vs {v}");
                }
            }
            assert!(peak > row[k - 1] && peak > row[k + 1]);
        }
    }

    #[test]
    fn framing_examples() {
        let mut cfg = classifier_config();
        assert_eq!(frame_count(80_000, &cfg), 501);
        cfg.center = false;
        cfg.hop_length = 256;
        assert_eq!(frame_count(64_000, &cfg), 250);
        let s = stft_magnitude(&vec![0.1; 80_000], &classifier_config()).unwrap();
        assert_eq!(s.shape(), &[501, 1024 / 2 + 1]);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(stft_magnitude(&[0.0; 10], &classifier_config()).is_err());
    }

    #[test]
    fn reflection_handles_long_pads() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(13, 5), 3);
    }

    #[test]
    fn white_noise_energy_grows_linearly() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let cfg = vocoder_config();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut ratios = Vec::new();
        for _ in 0..100 {
            let mut energy = |n: usize| {
                let sig: Vec<f32> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.1 * z as f32
                    })
                    .collect();
                stft_magnitude(&sig, &cfg)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|&m| (m as f64).powi(2))
                    .sum::<f64>()
            };
            let e1 = energy(8192);
            let e2 = energy(16384);
            ratios.push(e2 / e1);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 2.0).abs() < 0.2, "mean ratio {mean}");
    }

    proptest! {
        #[test]
        fn framing_formula_holds(len in 1024usize..20_000, center in any::<bool>()) {
            let cfg = FeatureConfig { center, ..vocoder_config() };
            let s = stft_magnitude(&vec![0.01; len], &cfg).unwrap();
            let expected = if center { 1 + len / 256 } else { len / 256 };
            prop_assert_eq!(s.rows(), expected);
        }
    }
}
