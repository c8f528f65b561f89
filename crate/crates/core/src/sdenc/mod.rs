//! SD map encoder: point-level tokens built from positional encodings, tag
//! embeddings and orthogonal element identifiers, mixed by self-attention.

pub mod linalg;
mod orf;
mod posenc;
mod tokens;

pub use orf::{generate_orf, generate_orf_with, OrfTable};
pub use posenc::posenc;
pub use tokens::{assemble_tokens, SdToken, TokenKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::SdFrame;
use crate::nn::{Dropout, EncoderBlock, LayerNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{checkpoint, Graph, ParamStore, Tensor, Var};
use crate::text::EMBED_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdEncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub d_orf: usize,
    pub d_pos: usize,
    pub d_tag: usize,
    pub gaussian_fallback: bool,
}

impl Default for SdEncoderConfig {
    fn default() -> Self {
        SdEncoderConfig {
            d_model: 128,
            layers: 2,
            heads: 8,
            d_ff: 256,
            dropout: 0.1,
            d_orf: 64,
            d_pos: 32,
            d_tag: EMBED_DIM,
            gaussian_fallback: false,
        }
    }
}

impl SdEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::contract(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_pos == 0 || !self.d_pos.is_multiple_of(4) {
            return Err(Error::contract(format!(
                "d_pos must be a positive multiple of 4, got {}",
                self.d_pos
            )));
        }
        if self.d_orf == 0 || self.d_tag == 0 || self.d_ff == 0 {
            return Err(Error::contract("sd encoder dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn raw_width(&self) -> usize {
        self.d_pos + self.d_tag + 2 * self.d_orf
    }

    /// Identifier table for every element of `frame`.
    pub fn frame_orf(&self, frame: &SdFrame, seed: u64) -> Result<OrfTable> {
        let ids: Vec<i64> = frame.elements.iter().map(|e| e.id).collect();
        generate_orf_with(&ids, self.d_orf, seed, self.gaussian_fallback)
    }
}

/// Where the tag segment of each token comes from.
pub enum TagSource<'a> {
    /// The embedding stored in the token.
    Tokens,
    /// All zeros: the no-tags ablation.
    Zeros,
    /// Rows of a graph variable, so gradients reach whatever produced it.
    Rows { table: Var, rows: &'a [usize] },
}

/// Stacks tokens into the `[N, raw_width]` input matrix.
pub fn token_inputs(g: &mut Graph, tokens: &[SdToken], cfg: &SdEncoderConfig, tags: TagSource) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::contract("no tokens to encode"));
    }
    let n = tokens.len();
    let pos: Vec<f64> = tokens.iter().flat_map(|t| t.pos.iter().copied()).collect();
    let ident: Vec<f64> = tokens.iter().flat_map(|t| t.ident.iter().copied()).collect();
    let pos = g.constant(&Tensor::matrix(n, cfg.d_pos, pos)?);
    let ident = g.constant(&Tensor::matrix(n, 2 * cfg.d_orf, ident)?);
    let tag = match tags {
        TagSource::Tokens => {
            let data: Vec<f64> = tokens.iter().flat_map(|t| t.tag.iter().copied()).collect();
            g.constant(&Tensor::matrix(n, cfg.d_tag, data)?)
        }
        TagSource::Zeros => g.constant(&Tensor::zeros(&[n, cfg.d_tag])),
        TagSource::Rows { table, rows } => {
            if rows.len() != n {
                return Err(Error::contract(format!("{} tag rows for {n} tokens", rows.len())));
            }
            g.gather_rows(table, rows)?
        }
    };
    g.concat_cols(&[pos, tag, ident])
}

#[derive(Clone, Debug)]
pub struct SdEncoder {
    pub cfg: SdEncoderConfig,
    pub input: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub ln_f: LayerNorm,
}

impl SdEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SdEncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let input = Linear::new(
            store,
            &format!("{prefix}.input"),
            cfg.raw_width(),
            cfg.d_model,
            true,
            rng,
        )?;
        let blocks = (0..cfg.layers)
            .map(|l| {
                EncoderBlock::new(
                    store,
                    &format!("{prefix}.layer{l}"),
                    cfg.d_model,
                    cfg.heads,
                    cfg.d_ff,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_f = LayerNorm::new(store, &format!("{prefix}.ln_f"), cfg.d_model)?;
        Ok(SdEncoder {
            cfg: cfg.clone(),
            input,
            blocks,
            ln_f,
        })
    }

    /// Encodes raw tokens `[N, raw_width]`; `seg` gives the token count of
    /// each frame stacked in `raw`, and attention never crosses frames.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        raw: Var,
        seg: &[usize],
        drop: &mut Dropout,
    ) -> Result<Var> {
        let mut x = self.input.forward(g, store, raw)?;
        x = drop.apply(g, x)?;
        for b in &self.blocks {
            x = b.forward(g, store, x, seg, drop)?;
        }
        self.ln_f.forward(g, store, x)
    }

    /// Evaluation-mode encoding of a single frame's tokens.
    pub fn encode(&self, store: &ParamStore, tokens: &[SdToken]) -> Result<Tensor> {
        let mut g = Graph::new();
        let raw = token_inputs(&mut g, tokens, &self.cfg, TagSource::Tokens)?;
        let out = self.forward(&mut g, store, raw, &[tokens.len()], &mut Dropout::Off)?;
        Ok(g.tensor(out))
    }
}

#[derive(Serialize)]
struct TokenRecord {
    index: usize,
    element: i64,
    kind: TokenKind,
    point: usize,
}

/// Encoded-token dump: an `SDTK` container holding `tokens` `[N, d_model]`
/// and a JSONL sidecar mapping each row to its element, kind and point index.
pub fn token_dump(encoded: &Tensor, tokens: &[SdToken]) -> Result<(Vec<u8>, String)> {
    if encoded.shape().first() != Some(&tokens.len()) {
        return Err(Error::contract(format!(
            "{} encoded rows for {} tokens",
            encoded.shape().first().copied().unwrap_or(0),
            tokens.len()
        )));
    }
    let bytes = checkpoint::encode(&[("tokens", encoded)]);
    let mut side = String::new();
    for (i, t) in tokens.iter().enumerate() {
        side.push_str(&serde_json::to_string(&TokenRecord {
            index: i,
            element: t.element,
            kind: t.kind,
            point: t.index,
        })?);
        side.push('\n');
    }
    Ok((bytes, side))
}
