use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::Serialize;

use sdprior::augment::augment;
use sdprior::corpus::{RelevanceConfig, TagsetCorpus};
use sdprior::frame::{project_to_frame, read_frames_jsonl, write_frames_jsonl, SdFrame};
use sdprior::metrics::{map_over_thresholds, MapInstance, SceneEval};
use sdprior::osm::{parse_osm_xml, EgoPose};
use sdprior::rng;
use sdprior::sdenc::generate_orf;
use sdprior::text::{pretrain, EmbeddingDump, PretrainedText};
use sdprior::toy::{generate_scenes, metrics_csv, read_scenes_jsonl, train_toy, write_scenes_jsonl, Mode, Scene};
use sdprior::TagSet;

use crate::config::{parse_range, RunConfig};
use crate::error::CliError;
use crate::{
    AugmentArgs, BuildCorpusArgs, Command, EmbedArgs, EvalArgs, ExtractArgs, GenScenesArgs, OrfCheckArgs, PretrainArgs,
    Switch, TrainToyArgs,
};

/// Largest tolerated off-diagonal Gram entry of assigned identifiers.
const ORF_TOLERANCE: f64 = 1e-6;

pub fn dispatch(cmd: &Command, mut cfg: RunConfig, out: &Path) -> Result<(), CliError> {
    if let Command::OrfCheck(a) = cmd {
        return orf_check(a, &cfg);
    }
    apply_overrides(cmd, &mut cfg)?;
    fs::create_dir_all(out)?;
    write_provenance(cmd, &cfg, out)?;
    match cmd {
        Command::Extract(a) => extract(a, &cfg, out),
        Command::BuildCorpus(a) => build_corpus(a, &cfg, out),
        Command::PretrainTags(a) => pretrain_tags(a, &cfg, out),
        Command::Embed(a) => embed(a, &cfg, out),
        Command::GenScenes(a) => gen_scenes(a, &cfg, out),
        Command::TrainToy(a) => train(a, &cfg, out),
        Command::Eval(a) => eval(a, &cfg, out),
        Command::Augment(a) => augment_frames(a, &cfg, out),
        Command::OrfCheck(_) => unreachable!("handled above"),
    }
}

/// Folds command-line flags into the configuration so that run.toml
/// records what was actually used.
fn apply_overrides(cmd: &Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::Extract(a) => {
            if let Some(r) = &a.range {
                cfg.extract.range = r.clone();
            }
            if let Some(p) = a.points {
                cfg.extract.points = p;
            }
            if let Some(o) = &a.osm {
                cfg.paths.osm = Some(o.clone());
            }
        }
        Command::BuildCorpus(a) => {
            if let Some(r) = &a.relevance {
                cfg.corpus.relevance = Some(r.clone());
            }
        }
        Command::PretrainTags(a) => {
            let t = &mut cfg.text_encoder;
            if let Some(e) = a.epochs {
                t.epochs = e;
            }
            if let Some(b) = a.batch {
                t.batch_size = b;
            }
            if let Some(s) = a.rel_tag_cl {
                t.rel_tag_cl = s == Switch::On;
            }
            if let Some(lr) = a.lr {
                t.lr = lr;
            }
            if let Some(c) = &a.corpus {
                cfg.paths.corpus = Some(c.clone());
            }
        }
        Command::Embed(a) => {
            if let Some(c) = &a.checkpoint {
                cfg.paths.checkpoints = Some(c.clone());
            }
        }
        Command::TrainToy(a) => {
            if let Some(e) = a.epochs {
                cfg.toy_task.epochs = e;
            }
            if let Some(t) = &a.text {
                cfg.paths.checkpoints = Some(t.clone());
            }
        }
        Command::Augment(a) => {
            let g = &mut cfg.augment;
            let set = |dst: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut g.element_drop_rate, a.element_drop_rate);
            set(&mut g.sigma_trans, a.sigma_trans);
            set(&mut g.sigma_rot, a.sigma_rot);
            set(&mut g.tag_mask.element_aug_rate, a.element_aug_rate);
            set(&mut g.tag_mask.tag_drop_rate, a.tag_drop_rate);
            if let Some(b) = a.locally_constant {
                g.locally_constant = b;
            }
            if let Some(b) = a.non_relevant_only {
                g.tag_mask.non_relevant_only = b;
            }
            if let Some(r) = &a.relevance {
                cfg.corpus.relevance = Some(r.clone());
            }
            g.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Command::GenScenes(_) | Command::Eval(_) | Command::OrfCheck(_) => {}
    }
    Ok(())
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a Command,
    config: &'a RunConfig,
}

fn write_provenance(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let text = toml::to_string(&Provenance {
        command: cmd,
        config: cfg,
    })
    .map_err(|e| CliError::Config(format!("cannot record configuration: {e}")))?;
    fs::write(out.join("run.toml"), text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(sdprior::Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    )))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} given by flag or config")))
}

fn relevance(cfg: &RunConfig) -> Result<RelevanceConfig, CliError> {
    match &cfg.corpus.relevance {
        None => Ok(RelevanceConfig::builtin()),
        Some(p) => Ok(RelevanceConfig::parse(&read_text(p)?)?),
    }
}

fn summary(v: serde_json::Value) {
    println!("{v}");
}

fn parse_ego(s: &str) -> Result<EgoPose, CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--ego {s:?} is not LON,LAT,HEADING")))?;
    match parts[..] {
        [lon, lat, heading] => {
            Ok(EgoPose::new(lon, lat, heading.to_radians()).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        _ => Err(CliError::Usage(format!("--ego {s:?} is not LON,LAT,HEADING"))),
    }
}

fn extract(a: &ExtractArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let osm = required(&cfg.paths.osm, "OSM input (--osm)")?;
    let poses = a.ego.iter().map(|s| parse_ego(s)).collect::<Result<Vec<_>, _>>()?;
    let range = parse_range(&cfg.extract.range)?;
    let bytes = fs::read(osm).map_err(|e| io_error(osm, e))?;
    let elements = parse_osm_xml(&bytes)?;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, ego)| project_to_frame(&elements, ego, range, cfg.extract.points, format!("frame-{i}")))
        .collect::<sdprior::Result<Vec<SdFrame>>>()?;
    fs::write(out.join("frames.jsonl"), write_frames_jsonl(&frames))?;
    summary(serde_json::json!({
        "frames": frames.len(),
        "elements": frames.iter().map(|f| f.elements.len()).collect::<Vec<_>>(),
    }));
    Ok(())
}

/// SD frames from frame JSONL or from the frames of scene JSONL.
fn read_frames(path: &Path) -> Result<Vec<SdFrame>, CliError> {
    let text = read_text(path)?;
    if text.trim_start().starts_with(r#"{"frame""#) {
        Ok(read_scenes_jsonl(&text)?.into_iter().map(|s| s.frame).collect())
    } else {
        Ok(read_frames_jsonl(&text)?)
    }
}

fn is_osm(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("osm" | "xml"))
}

fn build_corpus(a: &BuildCorpusArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let rel = relevance(cfg)?;
    let corpus = if is_osm(&a.input) {
        let bytes = fs::read(&a.input).map_err(|e| io_error(&a.input, e))?;
        TagsetCorpus::from_elements(&parse_osm_xml(&bytes)?, &rel)
    } else {
        TagsetCorpus::from_frames(&read_frames(&a.input)?, &rel)
    };
    fs::write(out.join("corpus.jsonl"), corpus.to_jsonl())?;
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for members in corpus.index.values() {
        *sizes.entry(members.len()).or_default() += 1;
    }
    let stats = serde_json::json!({
        "tagsets": corpus.len(),
        "buckets": corpus.bucket_count(),
        "bucket_sizes": sizes,
    });
    fs::write(
        out.join("buckets.json"),
        serde_json::to_string_pretty(&stats).expect("json") + "\n",
    )?;
    summary(stats);
    Ok(())
}

fn pretrain_tags(_a: &PretrainArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = required(&cfg.paths.corpus, "corpus (--corpus)")?;
    let corpus = TagsetCorpus::from_jsonl(&read_text(path)?, &relevance(cfg)?)?;
    let model = pretrain(&corpus, &cfg.text_encoder)?;
    model.save(out)?;
    let mut log = String::from("epoch,step,batch,loss\n");
    for s in &model.log {
        log.push_str(&format!("{},{},{},{}\n", s.epoch, s.step, s.batch, s.loss));
    }
    fs::write(out.join("loss.csv"), log)?;
    summary(serde_json::json!({
        "steps": model.log.len(),
        "epoch_mean_loss": model.epoch_mean_losses(),
    }));
    Ok(())
}

fn embed(a: &EmbedArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let dir = required(&cfg.paths.checkpoints, "checkpoint (--checkpoint)")?;
    let model = PretrainedText::load(dir)?;
    let frames = read_frames(&a.frames)?;
    let tagsets: Vec<TagSet> = frames
        .iter()
        .flat_map(|f| f.elements.iter().map(|e| e.tags.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let rows = model.encoder.embed_tagsets(&model.store, &model.vocab, &tagsets)?;
    let dump = EmbeddingDump::new(tagsets, rows)?;
    fs::write(out.join("embeddings.jsonl"), dump.sidecar())?;
    fs::write(out.join("embeddings.sdem"), dump.to_bytes())?;
    summary(serde_json::json!({"rows": dump.rows.len(), "dim": dump.dim()}));
    Ok(())
}

fn orf_check(a: &OrfCheckArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let ids: Vec<i64> = (0..a.n as i64).collect();
    let table = generate_orf(&ids, a.dorf, cfg.seed)?;
    let mut off: f64 = 0.0;
    let mut diag: f64 = 0.0;
    for (i, r) in table.rows.iter().enumerate() {
        for (j, s) in table.rows.iter().enumerate() {
            let dot: f64 = r.iter().zip(s).map(|(x, y)| x * y).sum();
            if i == j {
                diag = diag.max((dot - 1.0).abs());
            } else {
                off = off.max(dot.abs());
            }
        }
    }
    summary(serde_json::json!({
        "n": a.n,
        "d_orf": a.dorf,
        "seed": cfg.seed,
        "max_off_diagonal": off,
        "max_diagonal_deviation": diag,
    }));
    if off > ORF_TOLERANCE || diag > ORF_TOLERANCE {
        return Err(CliError::Invariant(format!(
            "Gram matrix deviates from identity by {}",
            off.max(diag)
        )));
    }
    Ok(())
}

fn gt_lines(scenes: &[Scene]) -> String {
    scenes
        .iter()
        .map(|s| serde_json::to_string(&s.gt).expect("instances serialize") + "\n")
        .collect()
}

fn gen_scenes(a: &GenScenesArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = &cfg.toy_task.scenes;
    let train = generate_scenes(spec, a.train, cfg.seed)?;
    let eval_seed: u64 = rng::derive(cfg.seed, "eval-scenes").random();
    let eval = generate_scenes(spec, a.eval, eval_seed)?;
    fs::write(out.join("train.jsonl"), write_scenes_jsonl(&train))?;
    fs::write(out.join("eval.jsonl"), write_scenes_jsonl(&eval))?;
    fs::write(out.join("eval_gt.jsonl"), gt_lines(&eval))?;
    summary(serde_json::json!({"train": train.len(), "eval": eval.len()}));
    Ok(())
}

fn train(a: &TrainToyArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let train = read_scenes_jsonl(&read_text(&a.train)?)?;
    let eval = read_scenes_jsonl(&read_text(&a.eval)?)?;
    let text = match (a.mode, &cfg.paths.checkpoints) {
        (Mode::NoTags, _) => None,
        (_, Some(dir)) => Some(PretrainedText::load(dir)?),
        (m, None) => {
            return Err(CliError::Usage(format!(
                "mode {m} needs a pretrained tag encoder (--text)"
            )))
        }
    };
    let run = train_toy(&train, &eval, a.mode, text.as_ref(), &cfg.toy_config())?;
    run.model.save(out)?;
    fs::write(out.join("metrics.csv"), metrics_csv(&run.log))?;
    let mut steps = String::from("epoch,step,loss,class_loss,point_loss\n");
    for s in &run.steps {
        steps.push_str(&format!(
            "{},{},{},{},{}\n",
            s.epoch, s.step, s.loss, s.class_loss, s.point_loss
        ));
    }
    fs::write(out.join("steps.csv"), steps)?;
    let frames: Vec<SdFrame> = eval.iter().map(|s| s.frame.clone()).collect();
    let preds = run.model.predict(&frames)?;
    let lines: String = preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("instances serialize") + "\n")
        .collect();
    fs::write(out.join("predictions.jsonl"), lines)?;
    if let Some(r) = &run.final_eval {
        fs::write(out.join("ap.csv"), r.to_csv())?;
        fs::write(out.join("ap.json"), r.to_json() + "\n")?;
    }
    summary(serde_json::json!({
        "mode": a.mode,
        "steps": run.steps.len(),
        "map": run.final_eval.as_ref().and_then(|r| r.map),
    }));
    Ok(())
}

/// Instance arrays, one per line; scene lines contribute their ground truth.
fn read_instances(path: &Path) -> Result<Vec<Vec<MapInstance>>, CliError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            if l.trim_start().starts_with('[') {
                serde_json::from_str(l).map_err(|e| data_error(path, i, e.to_string()))
            } else {
                Scene::from_json_line(l)
                    .map(|s| s.gt)
                    .map_err(|e| data_error(path, i, e.to_string()))
            }
        })
        .collect()
}

fn data_error(path: &Path, line: usize, msg: String) -> CliError {
    CliError::Core(sdprior::Error::Data(format!(
        "{} line {}: {msg}",
        path.display(),
        line + 1
    )))
}

fn eval(a: &EvalArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let preds = read_instances(&a.pred)?;
    let gt = read_instances(&a.gt)?;
    if preds.len() != gt.len() {
        return Err(CliError::Core(sdprior::Error::Data(format!(
            "{} prediction scenes for {} ground-truth scenes",
            preds.len(),
            gt.len()
        ))));
    }
    let scenes: Vec<SceneEval> = preds
        .into_iter()
        .zip(gt)
        .map(|(preds, gt)| SceneEval { preds, gt })
        .collect();
    let r = map_over_thresholds(&scenes, &cfg.metrics.thresholds)?;
    fs::write(out.join("ap.csv"), r.to_csv())?;
    fs::write(out.join("ap.json"), r.to_json() + "\n")?;
    summary(serde_json::json!({"map": r.map}));
    Ok(())
}

fn augment_frames(a: &AugmentArgs, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let frames = read_frames(&a.input)?;
    let rel = relevance(cfg)?;
    let augmented = frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let seed: u64 = rng::derive(cfg.seed, &format!("augment:{i}")).random();
            augment(f, &cfg.augment, &rel, seed)
        })
        .collect::<sdprior::Result<Vec<_>>>()?;
    fs::write(out.join("frames.jsonl"), write_frames_jsonl(&augmented))?;
    summary(serde_json::json!({
        "frames": augmented.len(),
        "elements_in": frames.iter().map(|f| f.elements.len()).sum::<usize>(),
        "elements_out": augmented.iter().map(|f| f.elements.len()).sum::<usize>(),
    }));
    Ok(())
}
