//! Polyphase windowed-sinc resampling with a Kaiser window.

use super::Waveform;
use crate::error::{bail_arg, Result};

/// Zero crossings of the sinc kept on each side of the center tap.
const ZERO_CROSSINGS: f64 = 16.0;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
/// Phase tables above this size fall back to quantized phases.
const MAX_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

struct Kernel {
    /// Taps per phase, covering input offsets `-half+1 ..= half`.
    half: usize,
    phases: usize,
    table: Vec<f32>,
}

impl Kernel {
    fn new(cutoff: f64, phases: usize) -> Self {
        let half = (ZERO_CROSSINGS / cutoff).ceil() as usize;
        let width = 2 * half;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut table = vec![0f32; phases * width];
        for p in 0..phases {
            let frac = p as f64 / phases as f64;
            let row = &mut table[p * width..(p + 1) * width];
            let mut taps = vec![0f64; width];
            for (j, tap) in taps.iter_mut().enumerate() {
                let x = j as f64 - (half as f64 - 1.0) - frac;
                let r = x / half as f64;
                if r.abs() <= 1.0 {
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    *tap = cutoff * sinc(cutoff * x) * window;
                }
            }
            // Unit DC gain per phase.
            let sum: f64 = taps.iter().sum();
            for (t, v) in row.iter_mut().zip(&taps) {
                *t = (v / sum) as f32;
            }
        }
        Kernel {
            half,
            phases,
            table,
        }
    }
}

/// Resample to `target_hz`; output length is `round(len · target / source)`.
pub fn resample(w: &Waveform, target_hz: u32) -> Result<Waveform> {
    if target_hz == 0 {
        bail_arg!("target sample rate must be positive");
    }
    if w.sample_rate == target_hz || w.is_empty() {
        return Ok(Waveform {
            sample_rate: target_hz,
            ..w.clone()
        });
    }
    let src = w.sample_rate as u64;
    let dst = target_hz as u64;
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let cutoff = (dst as f64 / src as f64).min(1.0) * ROLLOFF;
    let kernel = Kernel::new(cutoff, (up as usize).min(MAX_PHASES));
    let out_len = (w.len() as f64 * dst as f64 / src as f64).round() as usize;
    let x = &w.samples;
    let width = 2 * kernel.half;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as isize;
        let frac_num = pos % up;
        let phase = if up as usize <= MAX_PHASES {
            frac_num as usize
        } else {
            (frac_num as f64 / up as f64 * kernel.phases as f64) as usize
        };
        let taps = &kernel.table[phase * width..(phase + 1) * width];
        let first = base - (kernel.half as isize - 1);
        let mut acc = 0.0f64;
        for (j, &h) in taps.iter().enumerate() {
            let idx = first + j as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += h as f64 * x[idx as usize] as f64;
            }
        }
        out.push(acc as f32);
    }
    Waveform::new(out, target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{frame_count, stft_magnitude, FeatureConfig};

    #[test]
    fn identity_when_rates_match() {
        let w = Waveform::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
        assert!(resample(&w, 0).is_err());
    }

    #[test]
    fn output_length_rounds() {
        let w = Waveform::new(vec![0.0; 44100], 44100).unwrap();
        assert_eq!(resample(&w, 16000).unwrap().len(), 16000);
        let w = Waveform::new(vec![0.0; 1001], 44100).unwrap();
        assert_eq!(
            resample(&w, 16000).unwrap().len(),
            (1001.0f64 * 16000.0 / 44100.0).round() as usize
        );
    }

    #[test]
    fn preserves_dc_away_from_edges() {
        let w = Waveform::new(vec![0.5; 44100], 44100).unwrap();
        let r = resample(&w, 16000).unwrap();
        for &v in &r.samples[200..r.len() - 200] {
            assert!((v - 0.5).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn sine_peak_stays_at_frequency() {
        let sr = 44100;
        let samples = (0..sr)
            .map(|i| {
                (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr as f64).sin() as f32 * 0.5
            })
            .collect();
        let r = resample(&Waveform::new(samples, sr).unwrap(), 16000).unwrap();
        let cfg = FeatureConfig {
            sample_rate: 16000,
            n_fft: 1600,
            win_length: 1600,
            hop_length: 800,
            ..crate::dsp::vocoder_config()
        };
        let spec = stft_magnitude(&r.samples, &cfg).unwrap();
        assert_eq!(spec.rows(), frame_count(r.len(), &cfg));
        // Bin spacing is 10 Hz, so 1 kHz sits exactly on bin 100.
        let mid = spec.row(spec.rows() / 2);
        let peak = mid
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 100);
    }

    #[test]
    fn upsampling_interpolates_smoothly() {
        let sr = 8000;
        let samples: Vec<f32> = (0..sr)
            .map(|i| (2.0 * std::f64::consts::PI * 200.0 * i as f64 / sr as f64).sin() as f32)
            .collect();
        let r = resample(&Waveform::new(samples, sr).unwrap(), 16000).unwrap();
        for (i, &v) in r.samples.iter().enumerate().skip(500).take(1000) {
            let t = i as f64 / 16000.0;
            let expected = (2.0 * std::f64::consts::PI * 200.0 * t).sin();
            assert!((v as f64 - expected).abs() < 2e-3);
        }
    }
}
