//! Synthetic corpora for smoke training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierConfig, LabeledFeatures};
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::Result;
use crate::tensor::Tensor;

/// Burst frequency per class, Hz.
pub const BURST_HZ: [f64; 4] = [250.0, 500.0, 1000.0, 2000.0];

/// `seconds` of audio with one or two tone bursts at the class frequency,
/// separated by silence. Bursts last 0.1 to 0.2 s with 10 ms raised-cosine
/// ramps.
pub fn sine_burst<R: Rng + ?Sized>(class: usize, seconds: f64, rng: &mut R) -> Result<Waveform> {
    let sr = SAMPLE_RATE as f64;
    let n = (seconds * sr).round() as usize;
    let mut s = vec![0f32; n];
    let freq = BURST_HZ[class % BURST_HZ.len()];
    let ramp = (0.01 * sr) as usize;
    let bursts = rng.random_range(1..=2);
    let slot = n / bursts;
    for b in 0..bursts {
        let len = ((rng.random_range(0.1..0.2) * sr) as usize).min(slot);
        let start = b * slot + rng.random_range(0..=slot - len);
        let amp = rng.random_range(0.3..0.6);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for i in 0..len {
            let env = if i < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
            } else if len - i <= ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (len - i) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let t = i as f64 / sr;
            s[start + i] = (amp * env * (std::f64::consts::TAU * freq * t + phase).sin()) as f32;
        }
    }
    Waveform::new(s, SAMPLE_RATE)
}

/// `count` clips cycling through the classes, seeded.
pub fn sine_burst_corpus(count: usize, seconds: f64, seed: u64) -> Result<Vec<(Waveform, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let class = i % BURST_HZ.len();
            Ok((sine_burst(class, seconds, &mut rng)?, class))
        })
        .collect()
}

/// Feature size of [`two_domain_set`].
pub const TOY_FRAMES: usize = 16;
pub const TOY_MELS: usize = 16;
/// Ripple amplitude of the synthetic domain.
pub const TOY_DOMAIN_SHIFT: f64 = 0.5;

/// Patch-transformer sized for [`two_domain_set`].
pub fn toy_classifier_config() -> ClassifierConfig {
    ClassifierConfig {
        frames: TOY_FRAMES,
        n_mels: TOY_MELS,
        patch_time: 4,
        patch_freq: 4,
        embed_dim: 64,
        depth: 2,
        heads: 4,
        mlp_hidden: 64,
    }
}

/// Class `c` raises mel rows `4c..4c+4` by one over unit Gaussian noise.
/// The synthetic domain adds a frame-alternating ripple of amplitude
/// [`TOY_DOMAIN_SHIFT`], like a periodic synthesis artifact; it has zero
/// mean over any patch, so it can be removed without losing the labels.
/// Labels and domains are balanced and independent.
pub fn two_domain_set(count: usize, seed: u64) -> Vec<LabeledFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = TOY_MELS / 4;
    (0..count)
        .map(|i| {
            let label = i % 4;
            let domain = (i / 4) % 2;
            let noise = Tensor::<f64>::randn(&[TOY_FRAMES, TOY_MELS], &mut rng);
            let features = noise
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let (frame, mel) = (k / TOY_MELS, k % TOY_MELS);
                    let signal = if mel / band == label { 1.0 } else { 0.0 };
                    let ripple = if frame % 2 == 0 { 1.0 } else { -1.0 };
                    (v + signal + TOY_DOMAIN_SHIFT * ripple * domain as f64) as f32
                })
                .collect();
            LabeledFeatures {
                id: format!("toy-{i:04}"),
                features: Tensor::new(&[TOY_FRAMES, TOY_MELS], features).expect("shape"),
                label,
                domain,
            }
        })
        .collect()
}
