//! `sdprior`: OSM extraction, tag corpus and pretraining, SD encoding, the
//! synthetic map-decoding benchmark, evaluation and augmentation.
//!
//! Every artifact-producing subcommand writes into `--out` together with a
//! `run.toml` holding the resolved configuration and arguments. Exit codes:
//! 0 success, 1 usage or configuration, 2 data, 3 invariant.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sdprior::toy::Mode;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "sdprior", version, about = "SD-map prior encoding pipeline")]
pub struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and run.toml.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Project OSM XML around ego poses into SD frames.
    Extract(ExtractArgs),
    /// Deduplicate and bucket tagsets from OSM XML or frames.
    BuildCorpus(BuildCorpusArgs),
    /// Contrastive pretraining of the tag encoder.
    PretrainTags(PretrainArgs),
    /// Embed the tagsets of a frame file.
    Embed(EmbedArgs),
    /// Check orthonormality of generated element identifiers.
    OrfCheck(OrfCheckArgs),
    /// Generate synthetic train and eval scenes.
    GenScenes(GenScenesArgs),
    /// Train and evaluate the toy map decoder.
    TrainToy(TrainToyArgs),
    /// AP/mAP of predictions against ground truth.
    Eval(EvalArgs),
    /// Augment SD frames.
    Augment(AugmentArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub osm: Option<PathBuf>,
    /// `LON,LAT,HEADING` with heading in degrees counter-clockwise from
    /// east; repeat for several frames.
    #[arg(long, required = true)]
    pub ego: Vec<String>,
    /// `near`, `far` or `LxW` in meters.
    #[arg(long)]
    pub range: Option<String>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildCorpusArgs {
    /// `.osm`/`.xml` input or SD frame JSONL.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub relevance: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, value_enum)]
    pub rel_tag_cl: Option<Switch>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    /// Directory written by `pretrain-tags`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub frames: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OrfCheckArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dorf: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct GenScenesArgs {
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub eval: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    /// Pretrained tag encoder directory, needed by every mode but no-tags.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: sdprior::Error| e.to_string())
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// One JSON array of predicted instances per scene.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth instance arrays, or scene JSONL.
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub element_drop_rate: Option<f64>,
    #[arg(long)]
    pub locally_constant: Option<bool>,
    #[arg(long)]
    pub sigma_trans: Option<f64>,
    #[arg(long)]
    pub sigma_rot: Option<f64>,
    #[arg(long)]
    pub element_aug_rate: Option<f64>,
    #[arg(long)]
    pub tag_drop_rate: Option<f64>,
    #[arg(long)]
    pub non_relevant_only: Option<bool>,
    #[arg(long)]
    pub relevance: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    commands::dispatch(&cli.command, cfg.resolve(), &cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
