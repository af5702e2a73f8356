//! Mel-conditioned noise predictor: a gated, dilated residual stack fed by a
//! sinusoidal step embedding and a transposed-convolution mel upsampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::checkpoint::Checkpoint;
use crate::diffusion::{q_sample, Denoiser, NoiseSchedule};
use crate::dsp::{vocoder_mel, Waveform};
use crate::error::{bail_arg, Error, Result};
use crate::nn::{kaiming_normal, sum_grads, Bound, Conv1d, Linear, ParamId, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::parallel::Exec;
use crate::tensor::{Real, Tensor};

/// Width of the step-embedding MLP.
const EMBED_HIDDEN: usize = 512;
const UPSAMPLE_SLOPE: f64 = 0.4;
/// Log floor of the vocoder mel features.
const MEL_LOG_FLOOR: f64 = 1e-5;
/// Frequency extent of the upsampler kernels.
const UPSAMPLE_KH: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderConfig {
    pub residual_layers: usize,
    pub residual_channels: usize,
    pub kernel_size: usize,
    /// Layers per block; dilation restarts at 1 for each block.
    pub dilation_cycle_length: usize,
    /// Samples per mel frame. Must be the square of the upsampler stride.
    pub hop: usize,
    pub n_mels: usize,
    pub step_embed_dim: usize,
}

impl VocoderConfig {
    /// 30 layers x 64 channels in three blocks of ten.
    pub fn full() -> Self {
        VocoderConfig {
            residual_layers: 30,
            residual_channels: 64,
            kernel_size: 3,
            dilation_cycle_length: 10,
            hop: 256,
            n_mels: 80,
            step_embed_dim: 128,
        }
    }

    /// 8 layers x 16 channels, two blocks of four.
    pub fn desk() -> Self {
        VocoderConfig {
            residual_layers: 8,
            residual_channels: 16,
            dilation_cycle_length: 4,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.residual_layers == 0 || self.residual_channels == 0 || self.n_mels == 0 {
            return bad("layers, channels and n_mels must be positive".into());
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.dilation_cycle_length == 0
            || !self
                .residual_layers
                .is_multiple_of(self.dilation_cycle_length)
        {
            return bad(format!(
                "residual_layers ({}) must be a multiple of dilation_cycle_length ({})",
                self.residual_layers, self.dilation_cycle_length
            ));
        }
        if self.dilation_cycle_length > 20 {
            return bad("dilation_cycle_length above 20 is not supported".into());
        }
        let s = self.upsample_stride();
        if s * s != self.hop || !s.is_multiple_of(2) {
            return bad(format!(
                "hop {} must be the square of an even upsampler stride",
                self.hop
            ));
        }
        if self.step_embed_dim < 4 || !self.step_embed_dim.is_multiple_of(2) {
            return bad(format!(
                "step_embed_dim must be even and at least 4, got {}",
                self.step_embed_dim
            ));
        }
        Ok(())
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % self.dilation_cycle_length)
    }

    /// Time stride of each of the two upsampler stages.
    pub fn upsample_stride(&self) -> usize {
        (self.hop as f64).sqrt().round() as usize
    }

    /// Samples on each side of an output that can influence it through x_t.
    pub fn receptive_radius(&self) -> usize {
        (0..self.residual_layers)
            .map(|l| self.dilation(l) * (self.kernel_size - 1) / 2)
            .sum()
    }

    fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        for (name, v) in self.fields() {
            ckpt.push_scalar(format!("config/{name}"), v as f64)?;
        }
        Ok(())
    }

    fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| -> Result<usize> {
            let v = ckpt.scalar(&format!("config/{name}"))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Integrity(format!(
                    "config/{name} = {v} is not a count"
                )));
            }
            Ok(v as usize)
        };
        let c = VocoderConfig {
            residual_layers: get("residual_layers")?,
            residual_channels: get("residual_channels")?,
            kernel_size: get("kernel_size")?,
            dilation_cycle_length: get("dilation_cycle_length")?,
            hop: get("hop")?,
            n_mels: get("n_mels")?,
            step_embed_dim: get("step_embed_dim")?,
        };
        c.validate()?;
        Ok(c)
    }

    fn fields(&self) -> [(&'static str, usize); 7] {
        [
            ("residual_layers", self.residual_layers),
            ("residual_channels", self.residual_channels),
            ("kernel_size", self.kernel_size),
            ("dilation_cycle_length", self.dilation_cycle_length),
            ("hop", self.hop),
            ("n_mels", self.n_mels),
            ("step_embed_dim", self.step_embed_dim),
        ]
    }
}

/// Raw sinusoid features: `dim/2` sines then `dim/2` cosines of
/// `t · 10^(4i / (dim/2 − 1))`. Fractional steps interpolate linearly
/// between the neighbouring integer steps.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let at = |t: f64| -> Vec<f64> {
        let freqs: Vec<f64> = (0..half)
            .map(|i| t * 10f64.powf(4.0 * i as f64 / (half - 1).max(1) as f64))
            .collect();
        freqs
            .iter()
            .map(|f| f.sin())
            .chain(freqs.iter().map(|f| f.cos()))
            .collect()
    };
    let lo = t.floor();
    let frac = t - lo;
    if frac == 0.0 {
        return at(lo);
    }
    at(lo)
        .into_iter()
        .zip(at(lo + 1.0))
        .map(|(a, b)| a + frac * (b - a))
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct ResidualLayer {
    step: Linear,
    dilated: Conv1d,
    cond: Conv1d,
    res: Conv1d,
    skip: Conv1d,
}

#[derive(Clone, Debug)]
pub struct Vocoder<T: Real = f32> {
    pub config: VocoderConfig,
    pub params: ParamStore<T>,
    input: Conv1d,
    embed: [Linear; 2],
    upsample: [ParamId; 2],
    layers: Vec<ResidualLayer>,
    skip_out: Conv1d,
    output: Conv1d,
}

fn conv<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    rng: &mut R,
) -> Result<Conv1d> {
    let c = Conv1d::new(store, name, c_in, c_out, kernel, dilation, rng)?;
    store.set(
        c.w,
        kaiming_normal(&[c_out, c_in, kernel], c_in * kernel, rng),
    )?;
    Ok(c)
}

impl<T: Real> Vocoder<T> {
    pub fn new<R: Rng + ?Sized>(config: VocoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.residual_channels;
        let mut p = ParamStore::new();
        let input = conv(&mut p, "input", 1, c, 1, 1, rng)?;
        let embed = [
            Linear::new(
                &mut p,
                "embed.0",
                config.step_embed_dim,
                EMBED_HIDDEN,
                true,
                rng,
            )?,
            Linear::new(&mut p, "embed.1", EMBED_HIDDEN, EMBED_HIDDEN, true, rng)?,
        ];
        let s = config.upsample_stride();
        let fan = UPSAMPLE_KH * 2 * s;
        let upsample = [
            p.add(
                "upsample.0.weight",
                crate::nn::fan_in_uniform(&[1, 1, UPSAMPLE_KH, 2 * s], fan, rng),
            )?,
            p.add(
                "upsample.1.weight",
                crate::nn::fan_in_uniform(&[1, 1, UPSAMPLE_KH, 2 * s], fan, rng),
            )?,
        ];
        let mut layers = Vec::with_capacity(config.residual_layers);
        for l in 0..config.residual_layers {
            let name = |part: &str| format!("layers.{l}.{part}");
            layers.push(ResidualLayer {
                step: Linear::new(&mut p, &name("step"), EMBED_HIDDEN, c, true, rng)?,
                dilated: conv(
                    &mut p,
                    &name("dilated"),
                    c,
                    2 * c,
                    config.kernel_size,
                    config.dilation(l),
                    rng,
                )?,
                cond: conv(&mut p, &name("cond"), config.n_mels, 2 * c, 1, 1, rng)?,
                res: conv(&mut p, &name("res"), c, c, 1, 1, rng)?,
                skip: conv(&mut p, &name("skip"), c, c, 1, 1, rng)?,
            });
        }
        let skip_out = conv(&mut p, "skip_out", c, c, 1, 1, rng)?;
        let output = Conv1d::zeroed(&mut p, "output", c, 1)?;
        Ok(Vocoder {
            config,
            params: p,
            input,
            embed,
            upsample,
            layers,
            skip_out,
            output,
        })
    }

    /// Sinusoid features through two affine + swish layers: `[1, 512]`.
    pub fn step_embedding(&self, p: &Bound<T>, step: f64) -> Result<Var<T>> {
        let raw = sinusoidal_embedding(step, self.config.step_embed_dim);
        let x = Var::constant(Tensor::from_f64(&[1, raw.len()], &raw)?);
        let h = self.embed[0].forward(p, &x)?.swish();
        Ok(self.embed[1].forward(p, &h)?.swish())
    }

    /// Log-mel `[frames, n_mels]` rescaled so the log floor maps to 0 and
    /// unit magnitude to 1, then upsampled to `[n_mels, frames · hop]`.
    pub fn condition(&self, p: &Bound<T>, mel: &Var<T>) -> Result<Var<T>> {
        let floor = MEL_LOG_FLOOR.ln();
        let ones = Var::constant(Tensor::full(mel.shape(), T::of(-floor)));
        self.upsample_mel(p, &mel.add(&ones)?.scale(-1.0 / floor))
    }

    /// `[frames, n_mels]` to `[n_mels, frames · hop]`.
    pub fn upsample_mel(&self, p: &Bound<T>, mel: &Var<T>) -> Result<Var<T>> {
        let n_mels = self.config.n_mels;
        if mel.value().rank() != 2 || mel.shape()[1] != n_mels {
            return Err(Error::shape("upsample_mel", &[0, n_mels], mel.shape()));
        }
        let frames = mel.shape()[0];
        let s = self.config.upsample_stride();
        let mut x = mel.transpose()?.reshape(&[1, n_mels, frames])?;
        let mut len = frames;
        for (i, &w) in self.upsample.iter().enumerate() {
            len *= s;
            x = x
                .conv_transpose2d(&p[w], (1, s))?
                .narrow(1, UPSAMPLE_KH / 2, n_mels)?
                .narrow(2, s / 2, len)?;
            if i == 0 {
                x = x.leaky_relu(UPSAMPLE_SLOPE);
            }
        }
        x.leaky_relu(UPSAMPLE_SLOPE).reshape(&[n_mels, len])
    }

    /// One gated residual layer: returns `(residual, skip)`, both `[C, L]`.
    pub fn residual_layer(
        &self,
        p: &Bound<T>,
        layer: usize,
        x: &Var<T>,
        cond: &Var<T>,
        temb: &Var<T>,
    ) -> Result<(Var<T>, Var<T>)> {
        let l = &self.layers[layer];
        let c = self.config.residual_channels;
        if x.value().rank() != 2 || x.shape()[0] != c {
            return Err(Error::shape("residual_layer", &[c, 0], x.shape()));
        }
        if cond.shape() != [self.config.n_mels, x.shape()[1]] {
            return Err(Error::shape(
                "residual_layer conditioner",
                &[self.config.n_mels, x.shape()[1]],
                cond.shape(),
            ));
        }
        let step = l.step.forward(p, temb)?.reshape(&[c])?;
        let y = x.add_channel(&step)?;
        let h = l.dilated.forward(p, &y)?.add(&l.cond.forward(p, cond)?)?;
        let gate = h
            .narrow(0, 0, c)?
            .tanh()
            .mul(&h.narrow(0, c, c)?.sigmoid())?;
        let residual = x
            .add(&l.res.forward(p, &gate)?)?
            .scale(std::f64::consts::FRAC_1_SQRT_2);
        let skip = l.skip.forward(p, &gate)?;
        Ok((residual, skip))
    }

    /// Noise prediction for `x_t [L]` given an upsampled conditioner `[n_mels, L]`.
    pub fn denoise(&self, p: &Bound<T>, x_t: &Var<T>, step: f64, cond: &Var<T>) -> Result<Var<T>> {
        let len = x_t.value().len();
        if cond.value().rank() != 2 || cond.shape()[1] != len {
            bail_arg!(
                "waveform has {len} samples but the conditioner covers {:?}",
                cond.shape()
            );
        }
        let temb = self.step_embedding(p, step)?;
        let mut x = self.input.forward(p, &x_t.reshape(&[1, len])?)?.relu();
        let mut skips: Option<Var<T>> = None;
        for l in 0..self.layers.len() {
            let (res, skip) = self.residual_layer(p, l, &x, cond, &temb)?;
            x = res;
            skips = Some(match skips {
                Some(s) => s.add(&skip)?,
                None => skip,
            });
        }
        let s = skips
            .expect("at least one layer")
            .scale(1.0 / (self.layers.len() as f64).sqrt());
        let h = self.skip_out.forward(p, &s)?.relu();
        self.output.forward(p, &h)?.reshape(&[len])
    }

    /// `ε̂(x_t, step, mel)` with `x_t [frames · hop]`, `mel [frames, n_mels]`.
    pub fn forward(&self, p: &Bound<T>, x_t: &Var<T>, step: f64, mel: &Var<T>) -> Result<Var<T>> {
        let want = mel.shape()[0] * self.config.hop;
        if x_t.value().len() != want {
            bail_arg!(
                "waveform length {} does not match {} mel frames x hop {} = {want}",
                x_t.value().len(),
                mel.shape()[0],
                self.config.hop
            );
        }
        let cond = self.condition(p, mel)?;
        self.denoise(p, x_t, step, &cond)
    }
}

impl Denoiser for Vocoder<f32> {
    fn hop(&self) -> usize {
        self.config.hop
    }

    fn predict_noise(
        &self,
        x_t: &Tensor<f32>,
        step: f64,
        mel: &Tensor<f32>,
    ) -> Result<Tensor<f32>> {
        let p = self.params.bind(false);
        let out = self.forward(
            &p,
            &Var::constant(x_t.clone()),
            step,
            &Var::constant(mel.clone()),
        )?;
        Ok(out.value().clone())
    }
}

impl Vocoder<f32> {
    /// RCK1 contents: `config/*` scalars, `schedule/*` and `model/*` parameters.
    pub fn to_checkpoint(&self, schedule: &NoiseSchedule) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        self.config.write_to(&mut c)?;
        schedule.write_to(&mut c, "schedule")?;
        c.extend_params("model/", &self.params)?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, NoiseSchedule)> {
        let config = VocoderConfig::read_from(ckpt)?;
        let schedule = NoiseSchedule::read_from(ckpt, "schedule")?;
        let mut model = Vocoder::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let stored = ckpt.params_with_prefix("model/")?;
        if stored.len() != model.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} model tensors, config implies {}",
                stored.len(),
                model.params.len()
            )));
        }
        model.params.load_from(&stored)?;
        Ok((model, schedule))
    }
}

/// A training clip: audio trimmed to whole mel frames.
#[derive(Clone, Debug)]
pub struct Clip {
    /// `[frames · hop]`
    pub audio: Tensor<f32>,
    /// `[frames, n_mels]`
    pub mel: Tensor<f32>,
}

impl Clip {
    pub fn from_waveform(w: &Waveform) -> Result<Self> {
        let mel = vocoder_mel(w)?;
        let len = mel.frames() * mel.config.hop_length;
        Ok(Clip {
            audio: Tensor::vector(w.samples[..len].to_vec()),
            mel: mel.data,
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.rows()
    }
}

/// One fixed draw of the training objective on a crop.
#[derive(Clone, Debug)]
pub struct Example {
    pub x_t: Tensor<f32>,
    pub noise: Tensor<f32>,
    pub t: usize,
    /// Crop frames plus up to one context frame each side.
    pub mel: Tensor<f32>,
    /// Context frames before the crop inside `mel`.
    pub context: usize,
}

/// Crop `frames` mel frames starting at `start`, with the neighbouring
/// frames the upsampler needs to reproduce full-clip conditioning.
pub fn crop_example(
    clip: &Clip,
    start: usize,
    frames: usize,
    hop: usize,
    t: usize,
    noise: Tensor<f32>,
    schedule: &NoiseSchedule,
) -> Result<Example> {
    if frames == 0 || start + frames > clip.frames() {
        bail_arg!(
            "crop {start}..{} outside a clip of {} frames",
            start + frames,
            clip.frames()
        );
    }
    let lo = start.saturating_sub(1);
    let hi = (start + frames + 1).min(clip.frames());
    let mel = Tensor::new(
        &[hi - lo, clip.mel.cols()],
        clip.mel.data()[lo * clip.mel.cols()..hi * clip.mel.cols()].to_vec(),
    )?;
    let x0 = Tensor::vector(clip.audio.data()[start * hop..(start + frames) * hop].to_vec());
    let x_t = q_sample(&x0, t, &noise, schedule)?;
    Ok(Example {
        x_t,
        noise,
        t,
        mel,
        context: start - lo,
    })
}

impl<T: Real> Vocoder<T> {
    /// Per-example loss graph: MSE between predicted and drawn noise.
    fn example_loss(&self, p: &Bound<T>, ex: &Example) -> Result<Var<T>> {
        let hop = self.config.hop;
        let len = ex.x_t.len();
        let cond =
            self.condition(p, &Var::constant(ex.mel.cast()))?
                .narrow(1, ex.context * hop, len)?;
        let pred = self.denoise(p, &Var::constant(ex.x_t.cast()), ex.t as f64, &cond)?;
        pred.mse(&ex.noise.cast())
    }
}

impl Vocoder<f32> {
    /// Mean loss over `batch` and its gradient, in store order.
    pub fn batch_gradients(
        &self,
        batch: &[Example],
        exec: Exec,
    ) -> Result<(f64, Vec<Tensor<f32>>)> {
        if batch.is_empty() {
            bail_arg!("empty batch");
        }
        let parts = exec.try_map(batch, |ex| -> Result<(f64, Vec<Tensor<f32>>)> {
            let p = self.params.bind(true);
            let loss = self.example_loss(&p, ex)?;
            let grads = p.grads(&loss.backward());
            Ok((loss.value().item() as f64, grads))
        })?;
        let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
        let mut grads = sum_grads(parts.into_iter().map(|(_, g)| g).collect()).expect("non-empty");
        let inv = 1.0 / batch.len() as f32;
        grads.iter_mut().for_each(|g| g.scale_assign(inv));
        Ok((loss, grads))
    }

    /// Mean loss over `batch` without building gradients.
    pub fn batch_loss(&self, batch: &[Example], exec: Exec) -> Result<f64> {
        let losses = exec.try_map(batch, |ex| -> Result<f64> {
            let p = self.params.bind(false);
            Ok(self.example_loss(&p, ex)?.value().item() as f64)
        })?;
        Ok(losses.iter().sum::<f64>() / batch.len().max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Mel frames per training crop.
    pub crop_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            crop_frames: 2,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Draw a batch: clip, crop start, step and noise per example.
pub fn draw_batch<R: Rng + ?Sized>(
    clips: &[Clip],
    cfg: &TrainConfig,
    hop: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<Example>> {
    (0..cfg.batch_size)
        .map(|_| {
            let clip = &clips[rng.random_range(0..clips.len())];
            let start = rng.random_range(0..=clip.frames() - cfg.crop_frames);
            let t = rng.random_range(1..=schedule.steps());
            let noise = Tensor::randn(&[cfg.crop_frames * hop], rng);
            crop_example(clip, start, cfg.crop_frames, hop, t, noise, schedule)
        })
        .collect()
}

/// Train in place; `on_step(step, loss)` sees each batch loss. Returns
/// the loss history.
pub fn train(
    model: &mut Vocoder<f32>,
    clips: &[Clip],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if clips.is_empty() {
        return Err(Error::Data("no training clips".into()));
    }
    if cfg.batch_size == 0 || cfg.crop_frames == 0 {
        return Err(Error::Config(
            "batch_size and crop_frames must be positive".into(),
        ));
    }
    if let Some(short) = clips.iter().position(|c| c.frames() < cfg.crop_frames) {
        return Err(Error::Data(format!(
            "clip {short} has {} frames, fewer than the crop of {}",
            clips[short].frames(),
            cfg.crop_frames
        )));
    }
    if let Some(bad) = clips
        .iter()
        .position(|c| c.mel.cols() != model.config.n_mels)
    {
        return Err(Error::Data(format!(
            "clip {bad} has {} mel bands, model expects {}",
            clips[bad].mel.cols(),
            model.config.n_mels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(clips, cfg, model.config.hop, schedule, &mut rng)?;
        let (loss, grads) = model.batch_gradients(&batch, exec)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                param: format!("vocoder loss at step {}", step + 1),
            });
        }
        adam.step(&mut model.params, &grads)?;
        history.push(loss);
        on_step(step + 1, loss);
    }
    Ok(history)
}
