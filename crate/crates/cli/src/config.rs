//! Run configuration: a TOML file whose sections mirror the library
//! configs. Precedence is defaults, then the file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdprior::augment::AugmentConfig;
use sdprior::metrics::THRESHOLDS;
use sdprior::osm::RangeSpec;
use sdprior::sdenc::SdEncoderConfig;
use sdprior::text::PretrainConfig;
use sdprior::toy::{MatchConfig, SceneSpec, ToyConfig, ToyDecoderConfig};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub osm: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub outputs: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    /// `near`, `far` or `LxW` in meters.
    pub range: String,
    pub points: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            range: "near".into(),
            points: sdprior::frame::DEFAULT_POINTS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Irrelevant-tag list; the bundled list when absent.
    pub relevance: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskSection {
    pub scenes: SceneSpec,
    pub decoder: ToyDecoderConfig,
    pub matching: MatchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub grad_clip: f64,
    pub eval_every: usize,
}

impl Default for ToyTaskSection {
    fn default() -> Self {
        let t = ToyConfig::default();
        ToyTaskSection {
            scenes: SceneSpec::default(),
            decoder: t.decoder,
            matching: t.matching,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            grad_clip: t.grad_clip,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub thresholds: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            thresholds: THRESHOLDS.to_vec(),
        }
    }
}

/// Everything a subcommand needs. The global seed overrides the per-module
/// seeds of the library configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub extract: ExtractSection,
    pub corpus: CorpusSection,
    #[serde(rename = "text-encoder")]
    pub text_encoder: PretrainConfig,
    #[serde(rename = "sd-encoder")]
    pub sd_encoder: SdEncoderConfig,
    #[serde(rename = "toy-task")]
    pub toy_task: ToyTaskSection,
    pub augment: AugmentConfig,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            extract: ExtractSection::default(),
            corpus: CorpusSection::default(),
            text_encoder: PretrainConfig::default(),
            sd_encoder: ToyConfig::default().sd,
            toy_task: ToyTaskSection::default(),
            augment: AugmentConfig::default(),
            metrics: MetricsSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    /// Propagates the global seed into the module configs.
    pub fn resolve(mut self) -> Self {
        self.text_encoder.seed = self.seed;
        self
    }

    pub fn toy_config(&self) -> ToyConfig {
        let t = &self.toy_task;
        ToyConfig {
            sd: self.sd_encoder.clone(),
            decoder: t.decoder.clone(),
            matching: t.matching.clone(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            grad_clip: t.grad_clip,
            eval_every: t.eval_every,
            seed: self.seed,
        }
    }
}

pub fn parse_range(s: &str) -> Result<RangeSpec, CliError> {
    if let Some(r) = RangeSpec::preset(s) {
        return Ok(r);
    }
    let parsed = s
        .split_once('x')
        .and_then(|(l, w)| Some((l.trim().parse::<f64>().ok()?, w.trim().parse::<f64>().ok()?)));
    match parsed {
        Some((l, w)) => RangeSpec::new(l, w).map_err(|e| CliError::Config(e.to_string())),
        None => Err(CliError::Config(format!("range {s:?} is neither near, far nor LxW"))),
    }
}
