use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mnr_loss, TextEncoder, TextEncoderConfig, Vocabulary};
use crate::corpus::{make_batches, sample_positive_pairs, TagsetCorpus};
use crate::error::{Error, Result};
use crate::nn::Dropout;
use crate::rng;
use crate::tensor::{checkpoint, Adam, Graph, ParamStore};

pub const PREFIX: &str = "text";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub encoder: TextEncoderConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs_per_tagset: usize,
    pub rel_tag_cl: bool,
    pub lr: f64,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: TextEncoderConfig::default(),
            epochs: 4,
            batch_size: 256,
            pairs_per_tagset: 20,
            rel_tag_cl: true,
            lr: 1e-3,
            vocab_size: 4096,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub batch: usize,
    pub loss: f64,
}

pub struct PretrainedText {
    pub vocab: Vocabulary,
    pub encoder: TextEncoder,
    pub store: ParamStore,
    pub log: Vec<StepLog>,
}

impl PretrainedText {
    /// Fresh, untrained encoder with a vocabulary built from `corpus`.
    pub fn init(corpus: &TagsetCorpus, cfg: &PretrainConfig) -> Result<Self> {
        let vocab = Vocabulary::build(&corpus.entries, cfg.vocab_size)?;
        let mut store = ParamStore::new();
        let mut init_rng = rng::derive(cfg.seed, "text-init");
        let encoder = TextEncoder::new(&mut store, PREFIX, &cfg.encoder, vocab.len(), &mut init_rng)?;
        Ok(PretrainedText {
            vocab,
            encoder,
            store,
            log: Vec::new(),
        })
    }

    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let epochs = self.log.iter().map(|s| s.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let l: Vec<f64> = self.log.iter().filter(|s| s.epoch == e).map(|s| s.loss).collect();
                l.iter().sum::<f64>() / l.len().max(1) as f64
            })
            .collect()
    }

    /// Writes `text.sdtk`, `vocab.json` and `text_config.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save_store(&self.store, &dir.join("text.sdtk"))?;
        std::fs::write(dir.join("vocab.json"), serde_json::to_string(&self.vocab)?)?;
        std::fs::write(
            dir.join("text_config.json"),
            serde_json::to_string_pretty(&self.encoder.cfg)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab: Vocabulary = serde_json::from_str(&std::fs::read_to_string(dir.join("vocab.json"))?)?;
        let cfg: TextEncoderConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("text_config.json"))?)?;
        let mut store = ParamStore::new();
        let encoder = TextEncoder::new(&mut store, PREFIX, &cfg, vocab.len(), &mut rng::seeded(0))?;
        checkpoint::load_into(&mut store, &std::fs::read(dir.join("text.sdtk"))?)?;
        Ok(PretrainedText {
            vocab,
            encoder,
            store,
            log: Vec::new(),
        })
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Contrastive pretraining with the multiple-negatives ranking loss.
///
/// Each epoch draws fresh positive pairs and batches from the corpus, then
/// takes one Adam step per batch. Single-threaded and fully seeded.
pub fn pretrain(corpus: &TagsetCorpus, cfg: &PretrainConfig) -> Result<PretrainedText> {
    let mut model = PretrainedText::init(corpus, cfg)?;
    train_more(&mut model, corpus, cfg)?;
    Ok(model)
}

pub(crate) fn train_more(model: &mut PretrainedText, corpus: &TagsetCorpus, cfg: &PretrainConfig) -> Result<()> {
    if corpus.bucket_count() < 2 {
        return Err(Error::contract(format!(
            "contrastive training needs at least 2 distinct relevant subsets, corpus has {}",
            corpus.bucket_count()
        )));
    }
    let enc = &model.encoder;
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut drop_rng = rng::derive(cfg.seed, "text-dropout");
    let max_len = enc.cfg.max_len;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let s = epoch_seed(cfg.seed, epoch);
        let pairs = sample_positive_pairs(corpus, cfg.pairs_per_tagset, cfg.rel_tag_cl, s)?;
        let batches = make_batches(&pairs, cfg.batch_size, s)?;
        for (bi, batch) in batches.iter().enumerate() {
            let b = batch.len();
            let seqs: Vec<Vec<usize>> = batch
                .anchors
                .iter()
                .chain(&batch.positives)
                .map(|t| model.vocab.tokenize(t, max_len))
                .collect();
            model.store.zero_grads();
            let mut g = Graph::new();
            let mut drop = if enc.cfg.dropout > 0.0 {
                Dropout::On {
                    p: enc.cfg.dropout,
                    rng: &mut drop_rng,
                }
            } else {
                Dropout::Off
            };
            let emb = enc.forward(&mut g, &model.store, &seqs, &mut drop)?;
            let a = g.gather_rows(emb, &(0..b).collect::<Vec<_>>())?;
            let p = g.gather_rows(emb, &(b..2 * b).collect::<Vec<_>>())?;
            let loss = mnr_loss(&mut g, a, p, enc.cfg.scale)?;
            g.backward(loss)?;
            model.store.accumulate_grads(&g)?;
            adam.step(&mut model.store)?;
            model.log.push(StepLog {
                epoch,
                step,
                batch: bi,
                loss: g.scalar(loss),
            });
            step += 1;
        }
    }
    Ok(())
}
