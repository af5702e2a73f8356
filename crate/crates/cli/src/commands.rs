use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use respiro_core::checkpoint::{write_features, Checkpoint};
use respiro_core::classifier::{self, Classifier, ClassifierTrainConfig};
use respiro_core::corpus::{
    build_mixed, load_manifest, write_manifest, Label, MixPolicy, SampleRecord, Source, Split,
};
use respiro_core::diffusion::{build_fast_schedule, sample, FastSchedule, NoiseSchedule};
use respiro_core::dsp::{
    fix_duration, load_wav, log_mel, resample, write_pgm, write_wav, FeatureConfig, Pipeline,
    Waveform,
};
use respiro_core::error::{Error, Result};
use respiro_core::fsutil::write_atomic;
use respiro_core::metrics::{aggregate_seeds, pearson, MetricsReport};
use respiro_core::parallel::Exec;
use respiro_core::tensor::Tensor;
use respiro_core::vocoder::{self, Clip, Vocoder};
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Relative record paths resolve against the manifest's directory.
fn audio_path(manifest: &Path, record: &SampleRecord) -> PathBuf {
    if record.path.is_absolute() {
        record.path.clone()
    } else {
        manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join(&record.path)
    }
}

fn load_audio(path: &Path, cfg: &FeatureConfig, seconds: f64) -> Result<Waveform> {
    let mut w = load_wav(path)?;
    if w.sample_rate != cfg.sample_rate {
        w = resample(&w, cfg.sample_rate)?;
    }
    if w.clipped > 0 {
        eprintln!("{}: clipped {} samples", path.display(), w.clipped);
    }
    fix_duration(&w, seconds)
}

/// Write `config.json` holding the resolved configuration into `dir`.
fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("config.json"), cfg.to_json().as_bytes())
}

/// Same, for a single-file output: `<file>.config.json`.
fn write_resolved_beside(cfg: &RunConfig, file: &Path) -> Result<()> {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    write_atomic(&file.with_file_name(name), cfg.to_json().as_bytes())
}

fn is_fresh(cache: &Path, audio: &Path) -> bool {
    let modified = |p: &Path| std::fs::metadata(p).and_then(|m| m.modified()).ok();
    matches!((modified(cache), modified(audio)), (Some(c), Some(a)) if c >= a)
}

enum Outcome {
    Written,
    Skipped,
    Failed(String),
}

pub fn featurize(
    cfg: &RunConfig,
    manifest: &Path,
    pipeline: Pipeline,
    out: &Path,
    exec: Exec,
) -> Result<Value> {
    let records = load_manifest(manifest)?;
    let (features, seconds) = cfg.dsp.features(pipeline);
    let outcomes = exec.map(&records, |r| {
        let audio = audio_path(manifest, r);
        let cache = out.join(pipeline.cache_name(&r.id));
        if is_fresh(&cache, &audio) {
            return Outcome::Skipped;
        }
        let run = || -> Result<()> {
            let w = load_audio(&audio, features, seconds)?;
            write_features(&cache, &[log_mel(&w.samples, features)?])
        };
        match run() {
            Ok(()) => Outcome::Written,
            Err(e) => Outcome::Failed(format!("{}: {e}", r.id)),
        }
    });
    let (mut written, mut skipped) = (0, 0);
    let mut failed = Vec::new();
    for (r, o) in records.iter().zip(outcomes) {
        match o {
            Outcome::Written => written += 1,
            Outcome::Skipped => skipped += 1,
            Outcome::Failed(msg) => {
                eprintln!("failed: {msg}");
                failed.push(r.id.clone());
            }
        }
    }
    eprintln!(
        "{written} written, {skipped} up to date, {} failed",
        failed.len()
    );
    if !records.is_empty() {
        write_resolved(cfg, out)?;
    }
    if !failed.is_empty() {
        return Err(Error::Data(format!(
            "{} of {} records failed: {}",
            failed.len(),
            records.len(),
            failed.join(", ")
        )));
    }
    Ok(json!({
        "pipeline": pipeline.name(),
        "records": records.len(),
        "feature_dir": out,
    }))
}

fn clip_of(cfg: &RunConfig, path: &Path) -> Result<Clip> {
    let features = &cfg.dsp.vocoder;
    let w = load_audio(path, features, cfg.dsp.vocoder_seconds)?;
    let mel = log_mel(&w.samples, features)?;
    let len = mel.rows() * features.hop_length;
    Ok(Clip {
        audio: Tensor::vector(w.samples[..len].to_vec()),
        mel,
    })
}

pub fn train_vocoder(
    cfg: &RunConfig,
    manifest: &Path,
    steps: Option<usize>,
    out: &Path,
    exec: Exec,
) -> Result<Value> {
    let records: Vec<SampleRecord> = load_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == Split::Train && r.source == Source::Real)
        .collect();
    if records.is_empty() {
        return Err(Error::Data("no real training records to learn from".into()));
    }
    let clips = exec.try_map(&records, |r| clip_of(cfg, &audio_path(manifest, r)))?;
    let mut train = cfg.vocoder.train.clone();
    if let Some(s) = steps {
        train.steps = s;
    }
    let schedule = cfg.diffusion.schedule()?;
    let mut model = Vocoder::new(
        cfg.vocoder.model.clone(),
        &mut ChaCha8Rng::seed_from_u64(train.seed),
    )?;
    let every = (train.steps / 20).max(1);
    let history = vocoder::train(&mut model, &clips, &schedule, &train, exec, |step, loss| {
        if step % every == 0 {
            eprintln!("step {step} loss {loss:.5}");
        }
    })?;
    model.to_checkpoint(&schedule)?.save(out)?;
    let mut log = String::new();
    for (i, l) in history.iter().enumerate() {
        log.push_str(&json!({"step": i + 1, "loss": l}).to_string());
        log.push('\n');
    }
    let mut log_name = out.file_name().unwrap_or_default().to_os_string();
    log_name.push(".log.jsonl");
    write_atomic(&out.with_file_name(log_name), log.as_bytes())?;
    write_resolved_beside(cfg, out)?;
    Ok(json!({
        "checkpoint": out,
        "clips": clips.len(),
        "steps": history.len(),
        "first_loss": history.first(),
        "final_loss": history.last(),
    }))
}

fn load_vocoder(path: &Path) -> Result<(Vocoder<f32>, NoiseSchedule)> {
    Vocoder::from_checkpoint(&Checkpoint::load(path)?)
}

fn fast_schedule(cfg: &RunConfig, schedule: &NoiseSchedule) -> Result<Option<FastSchedule>> {
    if cfg.diffusion.fast_betas.is_empty() {
        Ok(None)
    } else {
        build_fast_schedule(schedule, &cfg.diffusion.fast_betas).map(Some)
    }
}

/// Parse `normal=0,crackle=0,wheeze=0,both=137`; missing classes are 0.
pub fn parse_counts(text: &str) -> Result<[usize; 4]> {
    let mut counts = [0; 4];
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, n) = part
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("expected class=count, got `{part}`")))?;
        let label: Label = name.trim().parse()?;
        counts[label.index()] = n
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad count `{n}` for {name}")))?;
    }
    Ok(counts)
}

struct Job {
    id: String,
    label: Label,
    source: usize,
    index: u64,
}

pub fn generate(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    counts: [usize; 4],
    seed: u64,
    out: &Path,
    exec: Exec,
) -> Result<Value> {
    let real: Vec<SampleRecord> = load_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == Split::Train && r.source == Source::Real)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for label in Label::ALL {
        let want = counts[label.index()];
        if want == 0 {
            continue;
        }
        let mut pool: Vec<usize> = (0..real.len())
            .filter(|&i| real[i].label == label)
            .collect();
        if pool.is_empty() {
            return Err(Error::Data(format!(
                "no real training records of class {label} to condition on"
            )));
        }
        rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
        for k in 0..want {
            jobs.push(Job {
                id: format!("syn-{label}-{k:05}"),
                label,
                source: pool[k % pool.len()],
                index: jobs.len() as u64,
            });
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    let mut pairs = String::new();
    let mut records = Vec::with_capacity(jobs.len());
    if !jobs.is_empty() {
        let (model, schedule) = load_vocoder(checkpoint)?;
        let fast = fast_schedule(cfg, &schedule)?;
        let mels = exec.try_map(&real, |r| -> Result<Option<Tensor<f32>>> {
            // Only records some job conditions on need their mel.
            if jobs.iter().any(|j| real[j.source].id == r.id) {
                Ok(Some(clip_of(cfg, &audio_path(manifest, r))?.mel))
            } else {
                Ok(None)
            }
        })?;
        exec.try_map(&jobs, |j| -> Result<()> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j.index + 1);
            let mel = mels[j.source]
                .as_ref()
                .expect("mel computed for every source");
            let w = sample(&model, mel, &schedule, &mut rng, fast.as_ref())?;
            write_wav(&out.join(format!("{}.wav", j.id)), &w)
        })?;
        for j in &jobs {
            records.push(SampleRecord {
                id: j.id.clone(),
                path: PathBuf::from(format!("{}.wav", j.id)),
                label: j.label,
                split: Split::Train,
                source: Source::Synthetic,
            });
            pairs.push_str(&json!({"id": j.id, "conditioned_on": real[j.source].id}).to_string());
            pairs.push('\n');
        }
    }
    let manifest_out = out.join("manifest.jsonl");
    write_manifest(&manifest_out, &records)?;
    write_atomic(&out.join("conditioning.jsonl"), pairs.as_bytes())?;
    write_resolved(cfg, out)?;
    let generated: BTreeMap<&str, usize> = Label::ALL
        .iter()
        .map(|l| (l.name(), counts[l.index()]))
        .collect();
    Ok(json!({
        "generated": generated,
        "manifest": manifest_out,
        "seed": seed,
    }))
}

pub fn mix(
    cfg: &RunConfig,
    real_manifest: &Path,
    synth_manifest: &Path,
    n: usize,
    out: &Path,
) -> Result<Value> {
    // Paths become absolute so the mixed manifest resolves from anywhere.
    let load = |m: &Path| -> Result<Vec<SampleRecord>> {
        let mut records = load_manifest(m)?;
        for r in &mut records {
            r.path = absolute(&audio_path(m, r));
        }
        Ok(records)
    };
    let (real, pool) = (load(real_manifest)?, load(synth_manifest)?);
    let mixed = build_mixed(&real, &pool, MixPolicy::new(n)?)?;
    write_manifest(out, &mixed.records)?;
    write_resolved_beside(cfg, out)?;
    let row: Vec<f64> = Label::ALL
        .iter()
        .map(|&l| mixed.stats.synthetic_ratio(l))
        .collect();
    eprintln!(
        "Mixed-{n} synthetic ratio (%): {}",
        row.iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let ratio: BTreeMap<&str, f64> = Label::ALL.iter().map(|l| l.name()).zip(row).collect();
    Ok(json!({
        "n": n,
        "manifest": out,
        "synthetic_ratio": ratio,
        "stats": mixed.stats.to_json(),
    }))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn split_features(
    records: &[SampleRecord],
    dir: &Path,
    split: Split,
    exec: Exec,
) -> Result<Vec<classifier::LabeledFeatures>> {
    let chosen: Vec<SampleRecord> = records
        .iter()
        .filter(|r| r.split == split)
        .cloned()
        .collect();
    classifier::load_features(&chosen, dir, exec)
}

pub fn train_clf(
    cfg: &RunConfig,
    manifest: &Path,
    aft: Option<bool>,
    seeds: Option<Vec<u64>>,
    parallel_seeds: bool,
    out: &Path,
    exec: Exec,
) -> Result<Value> {
    let records = load_manifest(manifest)?;
    let dir = cfg.feature_dir();
    let train_set = split_features(&records, &dir, Split::Train, exec)?;
    let test_set = split_features(&records, &dir, Split::Test, exec)?;
    if train_set.is_empty() {
        return Err(Error::Data("manifest has no training records".into()));
    }
    let mut tcfg: ClassifierTrainConfig = cfg.classifier.train.clone();
    if let Some(a) = aft {
        tcfg.aft = a;
    }
    let seeds = seeds.unwrap_or_else(|| cfg.seeds.clone());
    let eval = (!test_set.is_empty()).then_some(test_set.as_slice());
    let run = |&seed: &u64| -> Result<(u64, usize, classifier::Evaluation)> {
        let inner = if parallel_seeds {
            Exec::Sequential
        } else {
            exec
        };
        let mut model = Classifier::<f32>::new(
            cfg.classifier.model.clone(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )?;
        let cfg_seed = ClassifierTrainConfig {
            seed,
            ..tcfg.clone()
        };
        let mut log = String::new();
        let outcome = classifier::train(&mut model, &train_set, eval, &cfg_seed, inner, |e| {
            eprintln!(
                "seed {seed} epoch {} ce {:.4} dis {:.4} lambda {:.3} acc {:.1}{}",
                e.epoch,
                e.l_ce,
                e.l_dis,
                e.lambda,
                e.train_acc,
                e.score.map_or(String::new(), |s| format!(" score {s:.2}"))
            );
            log.push_str(&serde_json::to_string(e).expect("log serializes"));
            log.push('\n');
        })?;
        let seed_dir = out.join(format!("seed-{seed}"));
        model
            .to_checkpoint()?
            .save(&seed_dir.join("classifier.rck"))?;
        write_atomic(&seed_dir.join("log.jsonl"), log.as_bytes())?;
        let evaluation = model.evaluate(eval.unwrap_or(&train_set), inner)?;
        evaluation
            .confusion
            .write_csv(&seed_dir.join("confusion.csv"))?;
        evaluation
            .confusion
            .write_pgm(&seed_dir.join("confusion.pgm"))?;
        Ok((seed, outcome.best_epoch, evaluation))
    };
    let results = if parallel_seeds {
        exec.try_map(&seeds, run)?
    } else {
        seeds.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let metrics: Vec<_> = results.iter().filter_map(|r| r.2.metrics).collect();
    let aggregate = if metrics.len() == results.len() {
        aggregate_seeds(&metrics)?.to_json()
    } else {
        Value::Null
    };
    let per_seed: Vec<Value> = results
        .iter()
        .map(|(seed, best, ev)| {
            json!({
                "seed": seed,
                "best_epoch": best,
                "accuracy": ev.accuracy,
                "score": ev.metrics.map(|m| m.score),
            })
        })
        .collect();
    let report = json!({
        "mode": if tcfg.aft { "aft" } else { "ft" },
        "evaluated_on": if eval.is_some() { "test" } else { "train" },
        "per_seed": per_seed,
        "report": aggregate,
    });
    write_atomic(
        &out.join("report.json"),
        (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes(),
    )?;
    write_resolved(cfg, out)?;
    Ok(report)
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    out: Option<&Path>,
    exec: Exec,
) -> Result<Value> {
    let records = load_manifest(manifest)?;
    let model = Classifier::<f32>::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let data = classifier::load_features(&records, &cfg.feature_dir(), exec)?;
    if data.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let evaluation = model.evaluate(&data, exec)?;
    if let Some(dir) = out {
        evaluation.confusion.write_csv(&dir.join("confusion.csv"))?;
        evaluation.confusion.write_pgm(&dir.join("confusion.pgm"))?;
        write_resolved(cfg, dir)?;
    }
    let metrics = respiro_core::metrics::icbhi_metrics(&evaluation.confusion)?;
    Ok(MetricsReport::from(metrics).to_json())
}

pub fn spectrogram_dump(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    ids: &[String],
    seed: u64,
    out: &Path,
    exec: Exec,
) -> Result<Value> {
    let records = load_manifest(manifest)?;
    let chosen = ids
        .iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::Data(format!("id `{id}` is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (model, schedule) = load_vocoder(checkpoint)?;
    let fast = fast_schedule(cfg, &schedule)?;
    let indexed: Vec<(usize, &SampleRecord)> = chosen.into_iter().enumerate().collect();
    let rows = exec.try_map(&indexed, |&(i, r)| -> Result<Value> {
        let clip = clip_of(cfg, &audio_path(manifest, r))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let w = sample(&model, &clip.mel, &schedule, &mut rng, fast.as_ref())?;
        let generated = log_mel(&w.samples, &cfg.dsp.vocoder)?;
        let (real_path, gen_path) = (
            out.join(format!("{}.real.pgm", r.id)),
            out.join(format!("{}.generated.pgm", r.id)),
        );
        write_pgm(&real_path, &clip.mel)?;
        write_pgm(&gen_path, &generated)?;
        Ok(json!({
            "id": r.id,
            "real": real_path,
            "generated": gen_path,
            "mel_pearson": pearson(clip.mel.data(), generated.data())?,
        }))
    })?;
    write_resolved(cfg, out)?;
    Ok(json!({ "images": rows, "seed": seed }))
}
