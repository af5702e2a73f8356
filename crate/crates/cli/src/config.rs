//! Run configuration: one strict JSON document shared by every subcommand.

use std::path::{Path, PathBuf};

use respiro_core::classifier::{ClassifierConfig, ClassifierTrainConfig};
use respiro_core::diffusion::{NoiseSchedule, DEFAULT_FAST_BETAS};
use respiro_core::dsp::{classifier_config, vocoder_config, FeatureConfig, Pipeline};
use respiro_core::dsp::{CLASSIFIER_SECONDS, VOCODER_SECONDS};
use respiro_core::error::{Error, Result};
use respiro_core::vocoder::{TrainConfig, VocoderConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dsp: DspSection,
    pub diffusion: DiffusionSection,
    pub vocoder: VocoderSection,
    pub classifier: ClassifierSection,
    pub corpus: CorpusSection,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dsp: DspSection::default(),
            diffusion: DiffusionSection::default(),
            vocoder: VocoderSection::default(),
            classifier: ClassifierSection::default(),
            corpus: CorpusSection::default(),
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspSection {
    pub vocoder: FeatureConfig,
    pub classifier: FeatureConfig,
    pub vocoder_seconds: f64,
    pub classifier_seconds: f64,
}

impl Default for DspSection {
    fn default() -> Self {
        DspSection {
            vocoder: vocoder_config(),
            classifier: classifier_config(),
            vocoder_seconds: VOCODER_SECONDS,
            classifier_seconds: CLASSIFIER_SECONDS,
        }
    }
}

impl DspSection {
    pub fn features(&self, pipeline: Pipeline) -> (&FeatureConfig, f64) {
        match pipeline {
            Pipeline::Vocoder => (&self.vocoder, self.vocoder_seconds),
            Pipeline::Classifier => (&self.classifier, self.classifier_seconds),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Betas of the fast sampler; empty means full ancestral sampling.
    pub fast_betas: Vec<f64>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            fast_betas: DEFAULT_FAST_BETAS.to_vec(),
        }
    }
}

impl DiffusionSection {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocoderSection {
    pub model: VocoderConfig,
    pub train: TrainConfig,
}

impl Default for VocoderSection {
    fn default() -> Self {
        VocoderSection {
            model: VocoderConfig::full(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub model: ClassifierConfig,
    pub train: ClassifierTrainConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            model: ClassifierConfig::desk(),
            train: ClassifierTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Feature cache directory; `<output_dir>/features` when absent.
    pub feature_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.vocoder.validate()?;
        self.dsp.classifier.validate()?;
        if !(self.dsp.vocoder_seconds > 0.0 && self.dsp.classifier_seconds > 0.0) {
            return Err(Error::Config("clip durations must be positive".into()));
        }
        self.diffusion.schedule()?;
        self.vocoder.model.validate()?;
        self.classifier.model.validate()?;
        let (v, m) = (&self.dsp.vocoder, &self.vocoder.model);
        if v.hop_length != m.hop || v.n_mels != m.n_mels {
            return Err(Error::Config(format!(
                "vocoder features (hop {}, {} mels) do not match the model (hop {}, {} mels)",
                v.hop_length, v.n_mels, m.hop, m.n_mels
            )));
        }
        if self.dsp.classifier.n_mels != self.classifier.model.n_mels {
            return Err(Error::Config(format!(
                "classifier features have {} mels, the model expects {}",
                self.dsp.classifier.n_mels, self.classifier.model.n_mels
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn feature_dir(&self) -> PathBuf {
        self.corpus
            .feature_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("features"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
