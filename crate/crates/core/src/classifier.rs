//! Patch-transformer classifier with a label head and a real/synthetic
//! discriminator behind gradient reversal, trained on `L_CE + λ·L_Dis`.

use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::checkpoint::{read_features, Checkpoint};
use crate::corpus::{SampleRecord, Source};
use crate::dsp::Pipeline;
use crate::error::{bail_arg, Error, Result};
use crate::metrics::{confusion, icbhi_metrics, Metrics};
use crate::nn::{sum_grads, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::parallel::Exec;
use crate::tensor::{Real, Tensor};

pub const N_LABELS: usize = 4;
pub const N_DOMAINS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Frames covered by the position table; longer inputs are trimmed.
    pub frames: usize,
    pub n_mels: usize,
    pub patch_time: usize,
    pub patch_freq: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl ClassifierConfig {
    /// Depth 2, width 64 over 5 s of 128-band features.
    pub fn desk() -> Self {
        ClassifierConfig {
            frames: 501,
            n_mels: 128,
            patch_time: 16,
            patch_freq: 16,
            embed_dim: 64,
            depth: 2,
            heads: 4,
            mlp_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.patch_time == 0 || self.patch_freq == 0 {
            return bad("patch extents must be positive".into());
        }
        if self.frames < self.patch_time || self.n_mels < self.patch_freq {
            return bad(format!(
                "{}x{} features hold no whole {}x{} patch",
                self.frames, self.n_mels, self.patch_time, self.patch_freq
            ));
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.mlp_hidden == 0 {
            return bad("mlp_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn freq_patches(&self) -> usize {
        self.n_mels / self.patch_freq
    }

    pub fn max_patches(&self) -> usize {
        (self.frames / self.patch_time) * self.freq_patches()
    }

    fn fields(&self) -> [(&'static str, usize); 8] {
        [
            ("frames", self.frames),
            ("n_mels", self.n_mels),
            ("patch_time", self.patch_time),
            ("patch_freq", self.patch_freq),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ]
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
        let c = ClassifierConfig {
            frames: get("frames")?,
            n_mels: get("n_mels")?,
            patch_time: get("patch_time")?,
            patch_freq: get("patch_freq")?,
            embed_dim: get("embed_dim")?,
            depth: get("depth")?,
            heads: get("heads")?,
            mlp_hidden: get("mlp_hidden")?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// `2 / (1 + e^(−γp)) − 1`
pub fn lambda_schedule(progress: f64, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        bail_arg!("progress must lie in [0, 1], got {progress}");
    }
    Ok(2.0 / (1.0 + (-gamma * progress).exp()) - 1.0)
}

#[derive(Clone, Copy, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct Classifier<T: Real = f32> {
    pub config: ClassifierConfig,
    pub params: ParamStore<T>,
    patch: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    label_head: Linear,
    domain_head: [Linear; 2],
}

/// Embeddings and both heads' logits for one input.
pub struct Heads<T: Real> {
    pub embedding: Var<T>,
    pub label_logits: Var<T>,
    pub domain_logits: Var<T>,
}

impl<T: Real> Classifier<T> {
    pub fn new<R: Rng + ?Sized>(config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut p = ParamStore::new();
        let patch = Linear::new(
            &mut p,
            "patch",
            config.patch_time * config.patch_freq,
            d,
            true,
            rng,
        )?;
        let pos_init = Tensor::<f64>::randn(&[config.max_patches(), d], rng).map(|v| 0.02 * v);
        let pos = p.add("pos", pos_init.cast())?;
        let mut blocks = Vec::with_capacity(config.depth);
        for b in 0..config.depth {
            let name = |part: &str| format!("blocks.{b}.{part}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut p, &name("ln1"), d)?,
                q: Linear::new(&mut p, &name("q"), d, d, true, rng)?,
                k: Linear::new(&mut p, &name("k"), d, d, true, rng)?,
                v: Linear::new(&mut p, &name("v"), d, d, true, rng)?,
                proj: Linear::new(&mut p, &name("proj"), d, d, true, rng)?,
                ln2: LayerNorm::new(&mut p, &name("ln2"), d)?,
                fc1: Linear::new(&mut p, &name("fc1"), d, config.mlp_hidden, true, rng)?,
                fc2: Linear::new(&mut p, &name("fc2"), config.mlp_hidden, d, true, rng)?,
            });
        }
        let norm = LayerNorm::new(&mut p, "norm", d)?;
        let label_head = Linear::new(&mut p, "label_head", d, N_LABELS, true, rng)?;
        let domain_head = [
            Linear::new(&mut p, "domain_head.0", d, d, true, rng)?,
            Linear::new(&mut p, "domain_head.1", d, N_DOMAINS, true, rng)?,
        ];
        Ok(Classifier {
            config,
            params: p,
            patch,
            pos,
            blocks,
            norm,
            label_head,
            domain_head,
        })
    }

    /// Flat indices of each patch of a `[frames, n_mels]` input, patches in
    /// time-major order, and the resulting patch count.
    fn patch_index(&self, frames: usize) -> Result<(Rc<[usize]>, usize)> {
        let c = &self.config;
        if frames < c.patch_time {
            bail_arg!(
                "{frames} frames are too few for one {}-frame patch",
                c.patch_time
            );
        }
        let nt = frames.min(c.frames) / c.patch_time;
        let nf = c.freq_patches();
        let mut idx = Vec::with_capacity(nt * nf * c.patch_time * c.patch_freq);
        for i in 0..nt {
            for j in 0..nf {
                for r in 0..c.patch_time {
                    let row = (i * c.patch_time + r) * c.n_mels;
                    idx.extend((0..c.patch_freq).map(|k| row + j * c.patch_freq + k));
                }
            }
        }
        Ok((idx.into(), nt * nf))
    }

    /// Mean-pooled token embedding `[1, embed_dim]` of `[frames, n_mels]`.
    pub fn encode(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        let c = &self.config;
        if x.value().rank() != 2 || x.shape()[1] != c.n_mels {
            return Err(Error::shape(
                "classifier input",
                &[c.frames, c.n_mels],
                x.shape(),
            ));
        }
        let (idx, n) = self.patch_index(x.shape()[0])?;
        let d = c.embed_dim;
        let patches = x.gather(idx, &[n, c.patch_time * c.patch_freq])?;
        let mut h = self
            .patch
            .forward(p, &patches)?
            .add(&p[self.pos].narrow(0, 0, n)?)?;
        for b in &self.blocks {
            let a = b.ln1.forward(p, &h)?;
            let att = Var::attention(
                &b.q.forward(p, &a)?,
                &b.k.forward(p, &a)?,
                &b.v.forward(p, &a)?,
                c.heads,
            )?;
            h = h.add(&b.proj.forward(p, &att)?)?;
            let m = b.fc1.forward(p, &b.ln2.forward(p, &h)?)?.swish();
            h = h.add(&b.fc2.forward(p, &m)?)?;
        }
        self.norm.forward(p, &h)?.mean_rows().reshape(&[1, d])
    }

    /// Both heads. The discriminator sees the embedding through a unit
    /// gradient reversal, so its own weights descend `L_Dis` while the
    /// shared encoder ascends it.
    pub fn heads(&self, p: &Bound<T>, x: &Var<T>) -> Result<Heads<T>> {
        self.heads_from_embedding(p, self.encode(p, x)?)
    }

    pub fn heads_from_embedding(&self, p: &Bound<T>, embedding: Var<T>) -> Result<Heads<T>> {
        let label_logits = self.label_head.forward(p, &embedding)?;
        let domain_logits = self.discriminate(p, &embedding.gradient_reverse(1.0))?;
        Ok(Heads {
            embedding,
            label_logits,
            domain_logits,
        })
    }

    /// Discriminator logits `[1, 2]` of an embedding, without reversal.
    pub fn discriminate(&self, p: &Bound<T>, embedding: &Var<T>) -> Result<Var<T>> {
        let h = self.domain_head[0].forward(p, embedding)?.relu();
        self.domain_head[1].forward(p, &h)
    }

    /// Label logits `[4]` with the model frozen.
    pub fn predict(&self, features: &Tensor<T>) -> Result<Vec<f64>> {
        let p = self.params.bind(false);
        let logits = self
            .label_head
            .forward(&p, &self.encode(&p, &Var::constant(features.clone()))?)?;
        Ok(logits.value().to_f64_vec())
    }

    /// Frozen embedding as `f64`.
    pub fn embed(&self, features: &Tensor<T>) -> Result<Vec<f64>> {
        let p = self.params.bind(false);
        Ok(self
            .encode(&p, &Var::constant(features.clone()))?
            .value()
            .to_f64_vec())
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub id: String,
    /// `[frames, n_mels]`
    pub features: Tensor<f32>,
    pub label: usize,
    /// 0 real, 1 synthetic.
    pub domain: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_dis: f64,
    pub l_final: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    fn new(l_ce: f64, l_dis: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_ce,
            l_dis,
            l_final: l_ce + lambda * l_dis,
            lambda,
        }
    }
}

impl<T: Real> Classifier<T> {
    /// Batch-mean losses and gradients of `L_CE + λ·L_Dis`, in store order.
    /// With `λ = 0` the discriminator branch is left out of the backward
    /// pass, so the gradients are exactly those of plain classification.
    pub fn aft_loss(
        &self,
        batch: &[(&Tensor<T>, usize, usize)],
        lambda: f64,
        exec: Exec,
    ) -> Result<(LossBreakdown, Vec<Tensor<T>>)>
    where
        T: Send + Sync,
    {
        self.aft_step(batch, lambda, exec).map(|(l, g, _)| (l, g))
    }

    /// As [`Classifier::aft_loss`], also counting correct label argmaxes.
    fn aft_step(
        &self,
        batch: &[(&Tensor<T>, usize, usize)],
        lambda: f64,
        exec: Exec,
    ) -> Result<(LossBreakdown, Vec<Tensor<T>>, usize)>
    where
        T: Send + Sync,
    {
        if batch.is_empty() {
            bail_arg!("empty batch");
        }
        if !(lambda >= 0.0) {
            bail_arg!("lambda must be non-negative, got {lambda}");
        }
        let parts = exec.try_map(
            batch,
            |&(x, y, d)| -> Result<(f64, f64, Vec<Tensor<T>>, bool)> {
                if y >= N_LABELS || d >= N_DOMAINS {
                    bail_arg!("label {y} or domain {d} out of range");
                }
                let p = self.params.bind(true);
                let h = self.heads(&p, &Var::constant(x.clone()))?;
                let ce = h.label_logits.cross_entropy(&[y])?;
                let dis = h.domain_logits.cross_entropy(&[d])?;
                let total = if lambda == 0.0 {
                    ce.clone()
                } else {
                    ce.add(&dis.scale(lambda))?
                };
                let grads = p.grads(&total.backward());
                let hit = argmax(&h.label_logits.value().to_f64_vec()) == y;
                Ok((
                    ce.value().item().f64(),
                    dis.value().item().f64(),
                    grads,
                    hit,
                ))
            },
        )?;
        let n = batch.len() as f64;
        let l_ce = parts.iter().map(|p| p.0).sum::<f64>() / n;
        let l_dis = parts.iter().map(|p| p.1).sum::<f64>() / n;
        let correct = parts.iter().filter(|p| p.3).count();
        let mut grads = sum_grads(parts.into_iter().map(|p| p.2).collect()).expect("non-empty");
        let inv = T::of(1.0 / n);
        grads.iter_mut().for_each(|g| g.scale_assign(inv));
        Ok((LossBreakdown::new(l_ce, l_dis, lambda), grads, correct))
    }
}

impl Classifier<f32> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        for (name, v) in self.config.fields() {
            c.push_scalar(format!("config/{name}"), v as f64)?;
        }
        c.extend_params("model/", &self.params)?;
        Ok(c)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ClassifierConfig::read_from(ckpt)?;
        let mut model = Classifier::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let stored = ckpt.params_with_prefix("model/")?;
        if stored.len() != model.params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} model tensors, config implies {}",
                stored.len(),
                model.params.len()
            )));
        }
        model.params.load_from(&stored)?;
        Ok(model)
    }

    /// Argmax label per example.
    pub fn predict_labels(&self, data: &[LabeledFeatures], exec: Exec) -> Result<Vec<usize>> {
        exec.try_map(data, |ex| Ok(argmax(&self.predict(&ex.features)?)))
    }

    pub fn evaluate(&self, data: &[LabeledFeatures], exec: Exec) -> Result<Evaluation> {
        let preds = self.predict_labels(data, exec)?;
        let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
        let cm = confusion(&preds, &labels)?;
        let correct = preds.iter().zip(&labels).filter(|(a, b)| a == b).count();
        Ok(Evaluation {
            accuracy: 100.0 * correct as f64 / data.len().max(1) as f64,
            metrics: icbhi_metrics(&cm).ok(),
            confusion: cm,
        })
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Plain 4-way accuracy, percent.
    pub accuracy: f64,
    /// `None` when the set lacks normal or abnormal samples.
    pub metrics: Option<Metrics>,
    pub confusion: crate::metrics::ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Adversarial fine-tuning; off means a fixed `λ = 0`.
    pub aft: bool,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::with_lr(5e-5),
            aft: true,
            gamma: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ce: f64,
    pub l_dis: f64,
    pub l_final: f64,
    pub lambda: f64,
    pub train_acc: f64,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Train in place. The model ends holding the parameters of the epoch with
/// the best evaluation Score, or the last epoch when `eval` is absent or
/// never scorable.
pub fn train(
    model: &mut Classifier<f32>,
    data: &[LabeledFeatures],
    eval: Option<&[LabeledFeatures]>,
    cfg: &ClassifierTrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "epochs and batch_size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let lambda = if cfg.aft {
            lambda_schedule(epoch as f64 / cfg.epochs as f64, cfg.gamma)?
        } else {
            0.0
        };
        order.shuffle(&mut rng);
        let (mut ce, mut dis, mut seen) = (0.0, 0.0, 0usize);
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Tensor<f32>, usize, usize)> = chunk
                .iter()
                .map(|&i| (&data[i].features, data[i].label, data[i].domain))
                .collect();
            let (loss, grads, hits) = model.aft_step(&batch, lambda, exec)?;
            if !loss.l_final.is_finite() {
                return Err(Error::NonFinite {
                    param: format!("classifier loss in epoch {}", epoch + 1),
                });
            }
            ce += loss.l_ce * chunk.len() as f64;
            dis += loss.l_dis * chunk.len() as f64;
            seen += chunk.len();
            correct += hits;
            adam.step(&mut model.params, &grads)?;
        }
        let scored = match eval {
            Some(e) if !e.is_empty() => model.evaluate(e, exec)?.metrics,
            _ => None,
        };
        let (l_ce, l_dis) = (ce / seen as f64, dis / seen as f64);
        let entry = EpochLog {
            epoch: epoch + 1,
            l_ce,
            l_dis,
            l_final: l_ce + lambda * l_dis,
            lambda,
            train_acc: 100.0 * correct as f64 / data.len() as f64,
            se: scored.map(|m| m.se),
            sp: scored.map(|m| m.sp),
            score: scored.map(|m| m.score),
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(s) = scored.map(|m| m.score) {
            if best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, epoch + 1, model.params.clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome { log, best_epoch })
}

/// Features for each record from `<cache_dir>/<id>.classifier.rsf`.
pub fn load_features(
    records: &[SampleRecord],
    cache_dir: &Path,
    exec: Exec,
) -> Result<Vec<LabeledFeatures>> {
    exec.try_map(records, |r| {
        let path = cache_dir.join(Pipeline::Classifier.cache_name(&r.id));
        if !path.exists() {
            return Err(Error::Data(format!(
                "record `{}` has no feature cache at {}",
                r.id,
                path.display()
            )));
        }
        let mut tensors = read_features(&path)?;
        if tensors.len() != 1 {
            return Err(Error::Data(format!(
                "feature cache of `{}` holds {} tensors, expected 1",
                r.id,
                tensors.len()
            )));
        }
        Ok(LabeledFeatures {
            id: r.id.clone(),
            features: tensors.remove(0),
            label: r.label.index(),
            domain: (r.source == Source::Synthetic) as usize,
        })
    })
}

/// Accuracy (%) of the model's own discriminator head on `data`.
pub fn discriminator_accuracy(
    model: &Classifier<f32>,
    data: &[LabeledFeatures],
    exec: Exec,
) -> Result<f64> {
    if data.is_empty() {
        bail_arg!("discriminator accuracy needs samples");
    }
    let hits = exec.try_map(data, |e| -> Result<bool> {
        let p = model.params.bind(false);
        let emb = model.encode(&p, &Var::constant(e.features.clone()))?;
        Ok(argmax(&model.discriminate(&p, &emb)?.value().to_f64_vec()) == e.domain)
    })?;
    Ok(100.0 * hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
}

/// Held-out accuracy (%) of a logistic-regression domain probe fit on
/// frozen embeddings of `train` and scored on `test`.
pub fn domain_probe(
    model: &Classifier<f32>,
    train: &[LabeledFeatures],
    test: &[LabeledFeatures],
    exec: Exec,
) -> Result<f64> {
    let embed = |set: &[LabeledFeatures]| -> Result<Vec<Vec<f64>>> {
        exec.try_map(set, |e| model.embed(&e.features))
    };
    let (xtr, xte) = (embed(train)?, embed(test)?);
    if xtr.is_empty() || xte.is_empty() {
        bail_arg!("probe needs non-empty train and test sets");
    }
    let d = xtr[0].len();
    // Standardize with training statistics.
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for x in &xtr {
        x.iter()
            .zip(&mut mean)
            .for_each(|(v, m)| *m += v / xtr.len() as f64);
    }
    for x in &xtr {
        for ((v, m), s) in x.iter().zip(&mean).zip(&mut std) {
            *s += (v - m).powi(2) / xtr.len() as f64;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|s| s.sqrt().max(1e-8)).collect();
    let norm = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let xtr: Vec<Vec<f64>> = xtr.iter().map(|x| norm(x)).collect();
    let ytr: Vec<f64> = train.iter().map(|e| e.domain as f64).collect();
    // Full-batch gradient descent on the L2-regularized logistic loss.
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (lr, l2) = (0.5, 1e-3);
    for _ in 0..500 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, y) in xtr.iter().zip(&ytr) {
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - y;
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += err * v);
            gb += err;
        }
        let n = xtr.len() as f64;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * (g / n + l2 * *wi);
        }
        b -= lr * gb / n;
    }
    let correct = xte
        .iter()
        .zip(test)
        .filter(|(x, e)| {
            let z = b + norm(x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (z > 0.0) as usize == e.domain
        })
        .count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests;
