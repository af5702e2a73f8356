//! Denoising diffusion: noise schedules, forward corruption, the
//! ε-prediction loss and ancestral sampling.
//!
//! Steps are 1-based throughout; `alpha_bar(0) == 1`.

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::error::{bail_arg, Error, Result};
use crate::tensor::Tensor;

/// Fast-inference β ladder used when none is configured.
pub const DEFAULT_FAST_BETAS: [f64; 6] = [1e-4, 1e-3, 1e-2, 5e-2, 0.2, 0.5];

/// A noise-prediction network `ε̂(x_t, step, mel)`.
///
/// `step` is fractional so fast schedules can address points between
/// training steps.
pub trait Denoiser {
    /// Output samples per conditioning frame.
    fn hop(&self) -> usize;

    fn predict_noise(&self, x_t: &Tensor<f32>, step: f64, mel: &Tensor<f32>)
        -> Result<Tensor<f32>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Evenly spaced betas from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start ({beta_start}) <= beta_end ({beta_end}) < 1"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// The training schedule: 50 steps, β from 1e-4 to 0.02.
    pub fn standard() -> Self {
        Self::linear(50, 1e-4, 0.02).expect("valid constants")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            bail_arg!("step {t} outside 1..={}", self.steps());
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior standard deviation `√β̃_t`; zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t == 1 {
            return 0.0;
        }
        let tilde = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        tilde.sqrt()
    }

    /// Stores betas as an f32 pair (`hi`, `lo = β − hi`) so the f64 values
    /// survive the f32 checkpoint format.
    pub fn write_to(&self, ckpt: &mut Checkpoint, prefix: &str) -> Result<()> {
        let hi: Vec<f32> = self.betas.iter().map(|&b| b as f32).collect();
        let lo: Vec<f32> = self
            .betas
            .iter()
            .zip(&hi)
            .map(|(&b, &h)| (b - h as f64) as f32)
            .collect();
        ckpt.push(format!("{prefix}/betas"), Tensor::vector(hi))?;
        ckpt.push(format!("{prefix}/betas_lo"), Tensor::vector(lo))
    }

    pub fn read_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let get = |name: &str| {
            ckpt.get(&format!("{prefix}/{name}"))
                .ok_or_else(|| Error::Integrity(format!("checkpoint lacks `{prefix}/{name}`")))
        };
        let hi = get("betas")?;
        let lo = get("betas_lo")?;
        if hi.shape() != lo.shape() || hi.rank() != 1 {
            return Err(Error::Integrity(format!(
                "malformed `{prefix}` schedule tensors"
            )));
        }
        Self::from_betas(
            hi.data()
                .iter()
                .zip(lo.data())
                .map(|(&h, &l)| h as f64 + l as f64)
                .collect(),
        )
    }
}

/// Few-step inference schedule with the training-step coordinate each
/// inference step presents to the network.
#[derive(Clone, Debug, PartialEq)]
pub struct FastSchedule {
    pub schedule: NoiseSchedule,
    pub aligned_steps: Vec<f64>,
}

/// Align each inference step's cumulative ᾱ to a fractional training step
/// by linear interpolation of the training ᾱ curve. Values outside the
/// curve are clamped to the nearest end, with a warning.
pub fn build_fast_schedule(train: &NoiseSchedule, infer_betas: &[f64]) -> Result<FastSchedule> {
    if infer_betas.len() > train.steps() {
        return Err(Error::Config(format!(
            "{} inference steps exceed {} training steps",
            infer_betas.len(),
            train.steps()
        )));
    }
    if infer_betas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "inference betas must be strictly increasing".into(),
        ));
    }
    let schedule = NoiseSchedule::from_betas(infer_betas.to_vec())?;
    let curve = train.alpha_bars();
    let aligned_steps = schedule
        .alpha_bars()
        .iter()
        .enumerate()
        .map(|(s, &a)| {
            if a >= curve[0] {
                if a > curve[0] {
                    log::warn!("fast step {}: alpha_bar {a:.4} above training range; using step 1", s + 1);
                }
                return 1.0;
            }
            let last = *curve.last().unwrap();
            if a <= last {
                if a < last {
                    log::warn!(
                        "fast step {}: alpha_bar {a:.4} below training minimum {last:.4}; using step {}",
                        s + 1,
                        curve.len()
                    );
                }
                return curve.len() as f64;
            }
            // curve[i] >= a > curve[i + 1]
            let i = curve.windows(2).position(|w| w[0] >= a && a > w[1]).unwrap();
            (i + 1) as f64 + (curve[i] - a) / (curve[i] - curve[i + 1])
        })
        .collect();
    Ok(FastSchedule {
        schedule,
        aligned_steps,
    })
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · noise`.
pub fn q_sample(
    x0: &Tensor<f32>,
    t: usize,
    noise: &Tensor<f32>,
    s: &NoiseSchedule,
) -> Result<Tensor<f32>> {
    s.check_step(t)?;
    if x0.shape() != noise.shape() {
        return Err(Error::shape("q_sample", x0.shape(), noise.shape()));
    }
    let a = s.alpha_bar(t).sqrt();
    let b = (1.0 - s.alpha_bar(t)).sqrt();
    Ok(x0.zip_map(noise, |x, e| (a * x as f64 + b * e as f64) as f32))
}

/// Runs the chain one Gaussian step at a time.
pub fn iterate_forward<R: Rng + ?Sized>(
    x0: &Tensor<f32>,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    s.check_step(t)?;
    let mut x: Vec<f64> = x0.to_f64_vec();
    for k in 1..=t {
        let eps = Tensor::<f64>::randn(&[x.len()], rng);
        let (a, b) = ((1.0 - s.beta(k)).sqrt(), s.beta(k).sqrt());
        for (v, e) in x.iter_mut().zip(eps.data()) {
            *v = a * *v + b * e;
        }
    }
    Tensor::from_f64(x0.shape(), &x)
}

/// One draw of the ε-prediction objective.
#[derive(Clone, Debug)]
pub struct TrainingDraw {
    pub t: usize,
    pub noise: Tensor<f32>,
    pub x_t: Tensor<f32>,
}

pub fn draw_training_example<R: Rng + ?Sized>(
    x0: &Tensor<f32>,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<TrainingDraw> {
    let t = rng.random_range(1..=s.steps());
    let noise = Tensor::randn(x0.shape(), rng);
    let x_t = q_sample(x0, t, &noise, s)?;
    Ok(TrainingDraw { t, noise, x_t })
}

fn check_length(model: &dyn Denoiser, len: usize, mel: &Tensor<f32>) -> Result<()> {
    if mel.rank() != 2 || mel.rows() == 0 {
        bail_arg!("mel must be [frames, n_mels], got {:?}", mel.shape());
    }
    let want = mel.rows() * model.hop();
    if len != want {
        bail_arg!(
            "waveform of {len} samples does not match {} mel frames x hop {} = {want}",
            mel.rows(),
            model.hop()
        );
    }
    Ok(())
}

/// Mean squared error between drawn noise and the model's prediction.
pub fn training_loss<M: Denoiser, R: Rng + ?Sized>(
    model: &M,
    x0: &Tensor<f32>,
    mel: &Tensor<f32>,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    check_length(model, x0.len(), mel)?;
    let d = draw_training_example(x0, s, rng)?;
    let pred = model.predict_noise(&d.x_t, d.t as f64, mel)?;
    if pred.shape() != d.noise.shape() {
        return Err(Error::shape("training_loss", d.noise.shape(), pred.shape()));
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(d.noise.data())
        .map(|(&p, &e)| (p as f64 - e as f64).powi(2))
        .sum();
    Ok(sq / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReverseStep {
    pub mu: Tensor<f32>,
    pub sigma: f64,
    pub x_prev: Tensor<f32>,
}

/// `x_{t−1}` from `x_t` under schedule `s`, presenting `embed_step` to the
/// network. `noise` is ignored at `t = 1`.
fn reverse_step<M: Denoiser + ?Sized>(
    model: &M,
    x_t: &Tensor<f32>,
    t: usize,
    embed_step: f64,
    mel: &Tensor<f32>,
    s: &NoiseSchedule,
    noise: &Tensor<f32>,
) -> Result<ReverseStep> {
    s.check_step(t)?;
    if noise.shape() != x_t.shape() {
        return Err(Error::shape("p_sample_step", x_t.shape(), noise.shape()));
    }
    let eps = model.predict_noise(x_t, embed_step, mel)?;
    if eps.shape() != x_t.shape() {
        return Err(Error::shape("p_sample_step", x_t.shape(), eps.shape()));
    }
    let c = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
    let inv = 1.0 / s.alpha(t).sqrt();
    let mu = x_t.zip_map(&eps, |x, e| ((x as f64 - c * e as f64) * inv) as f32);
    let sigma = s.sigma(t);
    let x_prev = if t == 1 {
        mu.clone()
    } else {
        mu.zip_map(noise, |m, z| (m as f64 + sigma * z as f64) as f32)
    };
    Ok(ReverseStep { mu, sigma, x_prev })
}

pub fn p_sample_step<M: Denoiser + ?Sized>(
    model: &M,
    x_t: &Tensor<f32>,
    t: usize,
    mel: &Tensor<f32>,
    s: &NoiseSchedule,
    noise: &Tensor<f32>,
) -> Result<ReverseStep> {
    reverse_step(model, x_t, t, t as f64, mel, s, noise)
}

/// Ancestral sampling from `x_T ~ N(0, I)`, full or fast schedule.
pub fn sample<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mel: &Tensor<f32>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    fast: Option<&FastSchedule>,
) -> Result<Waveform> {
    if mel.rank() != 2 || mel.rows() == 0 {
        bail_arg!("mel must be [frames, n_mels], got {:?}", mel.shape());
    }
    let x_t = Tensor::randn(&[mel.rows() * model.hop()], rng);
    sample_from(model, mel, schedule, fast, x_t, rng)
}

/// [`sample`] with a caller-supplied starting point.
pub fn sample_from<M: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &M,
    mel: &Tensor<f32>,
    schedule: &NoiseSchedule,
    fast: Option<&FastSchedule>,
    mut x: Tensor<f32>,
    rng: &mut R,
) -> Result<Waveform> {
    if x.len() != mel.rows() * model.hop() {
        bail_arg!(
            "start has {} samples, expected {}",
            x.len(),
            mel.rows() * model.hop()
        );
    }
    let (s, embed): (&NoiseSchedule, Vec<f64>) = match fast {
        Some(f) => (&f.schedule, f.aligned_steps.clone()),
        None => (schedule, (1..=schedule.steps()).map(|t| t as f64).collect()),
    };
    for t in (1..=s.steps()).rev() {
        let noise = if t > 1 {
            Tensor::randn(x.shape(), rng)
        } else {
            Tensor::zeros(x.shape())
        };
        x = reverse_step(model, &x, t, embed[t - 1], mel, s, &noise)?.x_prev;
        if !x.is_finite() {
            return Err(Error::NonFinite {
                param: format!("sample at step {t}"),
            });
        }
    }
    Waveform::new(x.into_data(), SAMPLE_RATE)
}
