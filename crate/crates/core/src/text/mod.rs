//! Tagset text encoder: a small BERT-style transformer whose `[CLS]` output,
//! projected and L2-normalized, is the tagset embedding.

mod dump;
mod pretrain;
mod vocab;

pub use dump::EmbeddingDump;
pub use pretrain::{pretrain, PretrainConfig, PretrainedText, StepLog, PREFIX};
pub use vocab::{words, Vocabulary, CLS, PAD, RESERVED, SEP, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{normal_param, Dropout, EncoderBlock, LayerNorm, Linear};
use crate::rng::Rng;
use crate::tags::TagSet;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const EMBED_DIM: usize = 144;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub d_out: usize,
    pub dropout: f64,
    pub scale: f64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 128,
            max_len: 64,
            d_out: EMBED_DIM,
            dropout: 0.1,
            scale: 20.0,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::contract(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_out == 0 || self.max_len == 0 || self.d_ff == 0 {
            return Err(Error::contract("text encoder dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    pub vocab_size: usize,
    pub tok: ParamId,
    pub pos: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub ln_f: LayerNorm,
    pub proj: Linear,
}

impl TextEncoder {
    /// Registers all parameters under `prefix.`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &TextEncoderConfig,
        vocab_size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let tok = normal_param(store, &format!("{prefix}.tok"), vocab_size, d, 0.02, rng)?;
        let pos = normal_param(store, &format!("{prefix}.pos"), cfg.max_len, d, 0.02, rng)?;
        let blocks = (0..cfg.layers)
            .map(|l| EncoderBlock::new(store, &format!("{prefix}.layer{l}"), d, cfg.heads, cfg.d_ff, rng))
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(store, &format!("{prefix}.ln_f"), d)?;
        let proj = Linear::new(store, &format!("{prefix}.proj"), d, cfg.d_out, true, rng)?;
        Ok(TextEncoder {
            cfg: cfg.clone(),
            vocab_size,
            tok,
            pos,
            blocks,
            ln_f,
            proj,
        })
    }

    fn check(&self, seqs: &[Vec<usize>]) -> Result<()> {
        if seqs.is_empty() {
            return Err(Error::contract("no sequences to encode"));
        }
        for s in seqs {
            if s.is_empty() || s.len() > self.cfg.max_len {
                return Err(Error::contract(format!(
                    "sequence length {} outside 1..={}",
                    s.len(),
                    self.cfg.max_len
                )));
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= self.vocab_size) {
                return Err(Error::contract(format!(
                    "token id {bad} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Encodes a batch of id sequences into unit-norm rows `[B, d_out]`.
    /// The sequences share one graph; attention stays within each sequence.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, seqs: &[Vec<usize>], drop: &mut Dropout) -> Result<Var> {
        self.check(seqs)?;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let positions: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
        let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let tok = g.param(store, self.tok);
        let pos = g.param(store, self.pos);
        let te = g.embedding(tok, &ids)?;
        let pe = g.embedding(pos, &positions)?;
        let mut x = g.add(te, pe)?;
        x = drop.apply(g, x)?;
        for b in &self.blocks {
            x = b.forward(g, store, x, &lens, drop)?;
        }
        let starts: Vec<usize> = lens
            .iter()
            .scan(0, |acc, &l| {
                let s = *acc;
                *acc += l;
                Some(s)
            })
            .collect();
        let cls = g.gather_rows(x, &starts)?;
        let cls = self.ln_f.forward(g, store, cls)?;
        let out = self.proj.forward(g, store, cls)?;
        Ok(g.l2_normalize(out))
    }

    /// Evaluation-mode embeddings, one row per sequence, in chunks.
    pub fn embed(&self, store: &ParamStore, seqs: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(256) {
            let mut g = Graph::new();
            let e = self.forward(&mut g, store, chunk, &mut Dropout::Off)?;
            out.extend(g.value(e).chunks(self.cfg.d_out).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn embed_tagsets(&self, store: &ParamStore, vocab: &Vocabulary, tagsets: &[TagSet]) -> Result<Vec<Vec<f64>>> {
        let seqs: Vec<Vec<usize>> = tagsets.iter().map(|t| vocab.tokenize(t, self.cfg.max_len)).collect();
        self.embed(store, &seqs)
    }
}

fn check_unit_rows(g: &Graph, v: Var, what: &str) -> Result<()> {
    let (_, n) = g.rows_cols(v);
    for (i, row) in g.value(v).chunks(n).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("{what} row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

/// Fraction of queries whose nearest gallery embedding (by cosine) carries
/// the same label. Ties go to the lower gallery index.
pub fn top1_accuracy<L: PartialEq>(
    queries: &[Vec<f64>],
    query_labels: &[L],
    gallery: &[Vec<f64>],
    gallery_labels: &[L],
) -> f64 {
    if queries.is_empty() || gallery.is_empty() {
        return 0.0;
    }
    let hits = queries
        .iter()
        .zip(query_labels)
        .filter(|(q, label)| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (j, e) in gallery.iter().enumerate() {
                let c: f64 = q.iter().zip(e).map(|(a, b)| a * b).sum();
                if c > best.0 {
                    best = (c, j);
                }
            }
            gallery_labels[best.1] == **label
        })
        .count();
    hits as f64 / queries.len() as f64
}

/// Multiple-negatives ranking loss over unit-norm anchors and positives:
/// the mean cross-entropy of picking row `i` of `scale · A Pᵀ` at column `i`.
pub fn mnr_loss(g: &mut Graph, anchors: Var, positives: Var, scale: f64) -> Result<Var> {
    if g.shape(anchors) != g.shape(positives) || g.shape(anchors).len() != 2 {
        return Err(Error::Shape {
            op: "mnr_loss",
            lhs: g.shape(anchors).to_vec(),
            rhs: g.shape(positives).to_vec(),
        });
    }
    check_unit_rows(g, anchors, "anchor")?;
    check_unit_rows(g, positives, "positive")?;
    let b = g.shape(anchors)[0];
    let s = g.matmul_nt(anchors, positives)?;
    let s = g.scale(s, scale);
    let lp = g.log_softmax(s);
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let picked = g.pick(lp, &diag)?;
    let m = g.mean(picked);
    Ok(g.scale(m, -1.0))
}

/// Convenience wrapper evaluating [`mnr_loss`] on plain rows.
pub fn mnr_loss_value(anchors: &[Vec<f64>], positives: &[Vec<f64>], scale: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(&Tensor::from_rows(anchors)?);
    let p = g.constant(&Tensor::from_rows(positives)?);
    let l = mnr_loss(&mut g, a, p, scale)?;
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_loss_is_zero() {
        let l = mnr_loss_value(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], 20.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn orthonormal_pair_closed_form() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = mnr_loss_value(&rows, &rows, 1.0).unwrap();
        // -log(e / (e + 1)) = log(1 + e^-1)
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12, "{l}");
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let err = mnr_loss_value(&[vec![1.0, 0.1]], &[vec![1.0, 0.0]], 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
