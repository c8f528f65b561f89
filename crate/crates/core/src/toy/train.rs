use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::decoder::{predictions, ToyDecoder, ToyDecoderConfig};
use super::matching::{set_loss, MatchConfig, SetLoss};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::frame::SdFrame;
use crate::metrics::{map_over, ApResult, MapClass, MapInstance, SceneEval};
use crate::nn::Dropout;
use crate::rng;
use crate::sdenc::{assemble_tokens, token_inputs, SdEncoder, SdEncoderConfig, TagSource};
use crate::tags::TagSet;
use crate::tensor::{checkpoint, Adam, Graph, ParamStore, Var};
use crate::text::{PretrainedText, TextEncoder, TextEncoderConfig, Vocabulary};

/// How tag information reaches the SD encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Text encoder trained jointly at the full learning rate.
    #[serde(rename = "with-tags")]
    WithTags,
    /// Tag segments replaced by zeros; no text encoder.
    #[serde(rename = "no-tags")]
    NoTags,
    /// Pretrained text encoder kept fixed.
    #[serde(rename = "frozen-nlp")]
    FrozenNlp,
    /// Text encoder fine-tuned at a tenth of the learning rate.
    #[serde(rename = "finetune-0.1")]
    Finetune,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::WithTags, Mode::NoTags, Mode::FrozenNlp, Mode::Finetune];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::WithTags => "with-tags",
            Mode::NoTags => "no-tags",
            Mode::FrozenNlp => "frozen-nlp",
            Mode::Finetune => "finetune-0.1",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Mode::NoTags
    }

    /// Learning-rate multiplier of the text encoder parameters.
    pub fn text_multiplier(self) -> f64 {
        match self {
            Mode::WithTags => 1.0,
            Mode::Finetune => 0.1,
            Mode::FrozenNlp | Mode::NoTags => 0.0,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub sd: SdEncoderConfig,
    pub decoder: ToyDecoderConfig,
    pub matching: MatchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Linear learning-rate warmup, in optimizer steps. Cosine decay to zero
    /// follows over the remaining steps.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Evaluate every this many epochs (the last epoch always is).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            sd: SdEncoderConfig {
                d_model: 64,
                d_ff: 128,
                dropout: 0.0,
                ..SdEncoderConfig::default()
            },
            decoder: ToyDecoderConfig {
                queries: 12,
                d_ff: 128,
                ..ToyDecoderConfig::default()
            },
            matching: MatchConfig::default(),
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            warmup_steps: 100,
            grad_clip: 1.0,
            eval_every: 5,
            seed: 0,
        }
    }
}

/// Tag embeddings computed once with fixed text weights.
pub type TagCache = BTreeMap<TagSet, Vec<f64>>;

#[derive(Clone, Debug)]
pub struct TextPart {
    pub encoder: TextEncoder,
    pub vocab: Vocabulary,
}

/// SD encoder, toy decoder and (for tag modes) the text encoder, with all
/// parameters in one store under the `text.`, `sd.` and `dec.` prefixes.
#[derive(Clone, Debug)]
pub struct ToyNet {
    pub cfg: ToyConfig,
    pub mode: Mode,
    pub sd: SdEncoder,
    pub dec: ToyDecoder,
    pub text: Option<TextPart>,
}

/// Identifier seed used for a frame at evaluation time.
pub fn eval_orf_seed(frame: &SdFrame) -> u64 {
    rng::derive(0, &format!("eval-orf:{}", frame.id)).random()
}

impl ToyNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ToyConfig,
        mode: Mode,
        text: Option<(&TextEncoderConfig, &Vocabulary)>,
        rng: &mut rng::Rng,
    ) -> Result<Self> {
        let text = match (mode.uses_text(), text) {
            (false, _) => None,
            (true, None) => return Err(Error::contract(format!("mode {mode} needs a text encoder"))),
            (true, Some((tcfg, vocab))) => {
                if tcfg.d_out != cfg.sd.d_tag {
                    return Err(Error::contract(format!(
                        "text embeddings have width {}, SD encoder expects {}",
                        tcfg.d_out, cfg.sd.d_tag
                    )));
                }
                let encoder = TextEncoder::new(store, crate::text::PREFIX, tcfg, vocab.len(), rng)?;
                Some(TextPart {
                    encoder,
                    vocab: vocab.clone(),
                })
            }
        };
        let sd = SdEncoder::new(store, "sd", &cfg.sd, rng)?;
        let dec = ToyDecoder::new(store, "dec", &cfg.decoder, cfg.sd.d_model, rng)?;
        Ok(ToyNet {
            cfg: cfg.clone(),
            mode,
            sd,
            dec,
            text,
        })
    }

    fn text(&self) -> Result<&TextPart> {
        self.text
            .as_ref()
            .ok_or_else(|| Error::contract(format!("mode {} needs a text encoder", self.mode)))
    }

    /// Evaluation-mode embeddings of `tagsets` with the current text weights.
    pub fn tag_cache<'a>(&self, store: &ParamStore, tagsets: impl IntoIterator<Item = &'a TagSet>) -> Result<TagCache> {
        let t = self.text()?;
        let uniq: Vec<TagSet> = tagsets
            .into_iter()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let emb = t.encoder.embed_tagsets(store, &t.vocab, &uniq)?;
        Ok(uniq.into_iter().zip(emb).collect())
    }

    /// Runs SD encoder and decoder over stacked frames. Returns logits and
    /// normalized points, `queries` rows per frame.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: &[&SdFrame],
        orf_seeds: &[u64],
        cache: Option<&TagCache>,
        drop: &mut Dropout,
    ) -> Result<(Var, Var)> {
        if frames.len() != orf_seeds.len() || frames.is_empty() {
            return Err(Error::contract(
                "need one identifier seed per frame and at least one frame",
            ));
        }
        let sdc = &self.cfg.sd;
        let mut uniq: BTreeMap<&TagSet, usize> = BTreeMap::new();
        for f in frames {
            for e in &f.elements {
                let n = uniq.len();
                uniq.entry(&e.tags).or_insert(n);
            }
        }
        let frozen: Option<TagCache> = match (self.mode, cache) {
            (Mode::FrozenNlp, None) => Some(self.tag_cache(store, uniq.keys().copied())?),
            _ => None,
        };
        let cache = cache.or(frozen.as_ref());
        let zeros = vec![0.0; sdc.d_tag];
        let mut tokens = Vec::new();
        let mut rows = Vec::new();
        let mut seg = Vec::with_capacity(frames.len());
        for (f, &seed) in frames.iter().zip(orf_seeds) {
            let orf = sdc.frame_orf(f, seed)?;
            let mut emb = BTreeMap::new();
            for e in &f.elements {
                let v = match self.mode {
                    Mode::FrozenNlp => cache
                        .and_then(|c| c.get(&e.tags))
                        .ok_or_else(|| Error::contract(format!("no cached embedding for {}", e.tags)))?
                        .clone(),
                    _ => zeros.clone(),
                };
                emb.insert(e.id, v);
            }
            let toks = assemble_tokens(f, &emb, &orf, sdc)?;
            if toks.is_empty() {
                return Err(Error::contract(format!("frame {} yields no tokens", f.id)));
            }
            let by_id: BTreeMap<i64, &TagSet> = f.elements.iter().map(|e| (e.id, &e.tags)).collect();
            rows.extend(toks.iter().map(|t| uniq[by_id[&t.element]]));
            seg.push(toks.len());
            tokens.extend(toks);
        }
        let raw = match self.mode {
            Mode::NoTags => token_inputs(g, &tokens, sdc, TagSource::Zeros)?,
            Mode::FrozenNlp => token_inputs(g, &tokens, sdc, TagSource::Tokens)?,
            Mode::WithTags | Mode::Finetune => {
                let t = self.text()?;
                let mut ordered: Vec<(&TagSet, usize)> = uniq.iter().map(|(k, v)| (*k, *v)).collect();
                ordered.sort_by_key(|(_, i)| *i);
                let seqs: Vec<Vec<usize>> = ordered
                    .iter()
                    .map(|(ts, _)| t.vocab.tokenize(ts, t.encoder.cfg.max_len))
                    .collect();
                let table = t.encoder.forward(g, store, &seqs, drop)?;
                token_inputs(g, &tokens, sdc, TagSource::Rows { table, rows: &rows })?
            }
        };
        let memory = self.sd.forward(g, store, raw, &seg, drop)?;
        self.dec.forward(g, store, memory, &seg, drop)
    }

    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scenes: &[&Scene],
        orf_seeds: &[u64],
        cache: Option<&TagCache>,
        drop: &mut Dropout,
    ) -> Result<SetLoss> {
        let frames: Vec<&SdFrame> = scenes.iter().map(|s| &s.frame).collect();
        let (logits, points) = self.forward(g, store, &frames, orf_seeds, cache, drop)?;
        let gt: Vec<&[MapInstance]> = scenes.iter().map(|s| s.gt.as_slice()).collect();
        let range = frames[0].range;
        if frames.iter().any(|f| f.range != range) {
            return Err(Error::contract("all frames of a batch must share one range"));
        }
        set_loss(g, logits, points, self.dec.cfg.queries, &gt, range, &self.cfg.matching)
    }

    /// Evaluation-mode predictions, `queries` per frame.
    pub fn predict(
        &self,
        store: &ParamStore,
        frames: &[SdFrame],
        cache: Option<&TagCache>,
    ) -> Result<Vec<Vec<MapInstance>>> {
        let q = self.dec.cfg.queries;
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(64) {
            let refs: Vec<&SdFrame> = chunk.iter().collect();
            let seeds: Vec<u64> = chunk.iter().map(eval_orf_seed).collect();
            let mut g = Graph::new();
            let (logits, points) = self.forward(&mut g, store, &refs, &seeds, cache, &mut Dropout::Off)?;
            let (lv, pv) = (g.value(logits), g.value(points));
            let lw = lv.len() / chunk.len();
            let pw = pv.len() / chunk.len();
            for (i, f) in chunk.iter().enumerate() {
                out.push(predictions(
                    &lv[i * lw..(i + 1) * lw],
                    &pv[i * pw..(i + 1) * pw],
                    q,
                    f.range,
                ));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ToyModel {
    pub net: ToyNet,
    pub store: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ToyMeta {
    mode: Mode,
    config: ToyConfig,
    text_config: Option<TextEncoderConfig>,
    vocab: Option<Vocabulary>,
}

impl ToyModel {
    pub fn predict(&self, frames: &[SdFrame]) -> Result<Vec<Vec<MapInstance>>> {
        let cache = match self.net.mode {
            Mode::FrozenNlp => Some(self.net.tag_cache(
                &self.store,
                frames.iter().flat_map(|f| f.elements.iter().map(|e| &e.tags)),
            )?),
            _ => None,
        };
        self.net.predict(&self.store, frames, cache.as_ref())
    }

    pub fn evaluate(&self, scenes: &[Scene]) -> Result<ApResult> {
        let frames: Vec<SdFrame> = scenes.iter().map(|s| s.frame.clone()).collect();
        let preds = self.predict(&frames)?;
        let evals: Vec<SceneEval> = preds
            .into_iter()
            .zip(scenes)
            .map(|(p, s)| SceneEval {
                preds: p,
                gt: s.gt.clone(),
            })
            .collect();
        map_over(&evals)
    }

    /// Writes `toy.sdtk` and `toy_meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save_store(&self.store, &dir.join("toy.sdtk"))?;
        let meta = ToyMeta {
            mode: self.net.mode,
            config: self.net.cfg.clone(),
            text_config: self.net.text.as_ref().map(|t| t.encoder.cfg.clone()),
            vocab: self.net.text.as_ref().map(|t| t.vocab.clone()),
        };
        std::fs::write(dir.join("toy_meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ToyMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("toy_meta.json"))?)?;
        let mut store = ParamStore::new();
        let text = match (&meta.text_config, &meta.vocab) {
            (Some(c), Some(v)) => Some((c, v)),
            _ => None,
        };
        let net = ToyNet::new(&mut store, &meta.config, meta.mode, text, &mut rng::seeded(0))?;
        checkpoint::load_into(&mut store, &std::fs::read(dir.join("toy.sdtk"))?)?;
        Ok(ToyModel { net, store })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mode: Mode,
    /// Mean AP over thresholds per class, NaN when the class is absent.
    pub ap: [f64; 3],
    pub map: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ToyStep {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub point_loss: f64,
}

pub struct ToyRun {
    pub model: ToyModel,
    pub steps: Vec<ToyStep>,
    pub log: Vec<EpochLog>,
    pub final_eval: Option<ApResult>,
    pub effective_lrs: Vec<(String, f64)>,
}

pub fn metrics_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,mode,ap_centerline,ap_boundary,ap_divider,map\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.mode, e.ap[0], e.ap[1], e.ap[2], e.map
        ));
    }
    out
}

/// Learning rate at optimizer step `step` of `total`.
pub fn lr_at(cfg: &ToyConfig, step: usize, total: usize) -> f64 {
    let warm = cfg.warmup_steps.min(total);
    if step < warm {
        return cfg.lr * (step + 1) as f64 / warm as f64;
    }
    let t = (step - warm) as f64 / (total - warm).max(1) as f64;
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Builds a model for `mode`, copying pretrained text weights when the mode
/// uses tags.
pub fn init_toy(mode: Mode, text: Option<&PretrainedText>, cfg: &ToyConfig) -> Result<ToyModel> {
    let mut store = ParamStore::new();
    let mut init = rng::derive(cfg.seed, "toy-init");
    let spec = text.map(|t| (&t.encoder.cfg, &t.vocab));
    let net = ToyNet::new(&mut store, cfg, mode, spec, &mut init)?;
    if let (Some(_), Some(pre)) = (&net.text, text) {
        let copied = store.copy_matching(&pre.store);
        if copied != pre.store.len() {
            return Err(Error::contract(format!(
                "copied {copied} of {} pretrained text parameters",
                pre.store.len()
            )));
        }
    }
    Ok(ToyModel { net, store })
}

/// Jointly trains SD encoder and decoder (and the text encoder at the mode's
/// multiplier) on `train`, evaluating mAP on `eval`. Identifier rows are
/// redrawn for every frame at every step. Single-threaded and seeded.
pub fn train_toy(
    train: &[Scene],
    eval: &[Scene],
    mode: Mode,
    text: Option<&PretrainedText>,
    cfg: &ToyConfig,
) -> Result<ToyRun> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::contract("toy training needs scenes and a positive batch size"));
    }
    let mut model = init_toy(mode, text, cfg)?;
    let mut adam = Adam::new(&model.store, cfg.lr);
    adam.set_multiplier_prefix(
        &model.store,
        &format!("{}.", crate::text::PREFIX),
        mode.text_multiplier(),
    );
    let effective_lrs = adam.effective_lrs(&model.store);
    // Text weights never change in frozen mode, so embed every tagset once.
    let cache = match mode {
        Mode::FrozenNlp => Some(
            model.net.tag_cache(
                &model.store,
                train
                    .iter()
                    .chain(eval)
                    .flat_map(|s| s.frame.elements.iter().map(|e| &e.tags)),
            )?,
        ),
        _ => None,
    };
    let mut orf_rng = rng::derive(cfg.seed, "toy-orf");
    let mut drop_rng = rng::derive(cfg.seed, "toy-dropout");
    let mut steps = Vec::new();
    let mut log = Vec::new();
    let mut final_eval = None;
    let mut step = 0usize;
    let total_steps = cfg.epochs * train.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::derive(cfg.seed.wrapping_add(epoch as u64), "toy-shuffle"));
        for batch in order.chunks(cfg.batch_size) {
            let scenes: Vec<&Scene> = batch.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = scenes.iter().map(|_| orf_rng.random()).collect();
            model.store.zero_grads();
            let mut g = Graph::new();
            let mut drop = if cfg.sd.dropout > 0.0 {
                Dropout::On {
                    p: cfg.sd.dropout,
                    rng: &mut drop_rng,
                }
            } else {
                Dropout::Off
            };
            let l = model
                .net
                .loss(&mut g, &model.store, &scenes, &seeds, cache.as_ref(), &mut drop)?;
            let total = g.scalar(l.total);
            if !total.is_finite() {
                return Err(Error::contract(format!("toy loss diverged at step {step}")));
            }
            g.backward(l.total)?;
            model.store.accumulate_grads(&g)?;
            if cfg.grad_clip > 0.0 {
                model.store.clip_grad_norm(cfg.grad_clip);
            }
            adam.lr = lr_at(cfg, step, total_steps);
            adam.step(&mut model.store)?;
            steps.push(ToyStep {
                epoch,
                step,
                loss: total,
                class_loss: l.class_loss,
                point_loss: l.point_loss,
            });
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        if !eval.is_empty() && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
            let r = model.evaluate(eval)?;
            log.push(EpochLog {
                epoch,
                mode,
                ap: MapClass::ALL.map(|c| r.class_ap(c).unwrap_or(f64::NAN)),
                map: r.map_value(),
            });
            if last {
                final_eval = Some(r);
            }
        }
    }
    Ok(ToyRun {
        model,
        steps,
        log,
        final_eval,
        effective_lrs,
    })
}
