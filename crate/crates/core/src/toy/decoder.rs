use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MapClass, MapInstance};
use crate::nn::{normal_param, DecoderBlock, Dropout, LayerNorm, Linear};
use crate::osm::RangeSpec;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Real classes plus the trailing "no object" class.
pub const LOGITS: usize = MapClass::ALL.len() + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDecoderConfig {
    pub queries: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub points: usize,
}

impl Default for ToyDecoderConfig {
    fn default() -> Self {
        ToyDecoderConfig {
            queries: 20,
            layers: 2,
            heads: 8,
            d_ff: 256,
            points: 10,
        }
    }
}

/// Learned queries refined by decoder blocks that cross-attend to the SD
/// tokens in every layer, followed by class and point heads.
#[derive(Clone, Debug)]
pub struct ToyDecoder {
    pub cfg: ToyDecoderConfig,
    pub query: ParamId,
    pub blocks: Vec<DecoderBlock>,
    pub ln_f: LayerNorm,
    pub class_head: Linear,
    pub point_head: Linear,
}

impl ToyDecoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &ToyDecoderConfig,
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if cfg.queries == 0 || cfg.points < 2 {
            return Err(Error::contract("decoder needs at least one query and two points"));
        }
        if cfg.heads == 0 || !d_model.is_multiple_of(cfg.heads) {
            return Err(Error::contract(format!(
                "d_model {d_model} not divisible by {} heads",
                cfg.heads
            )));
        }
        let query = normal_param(store, &format!("{prefix}.query"), cfg.queries, d_model, 1.0, rng)?;
        let blocks = (0..cfg.layers)
            .map(|l| DecoderBlock::new(store, &format!("{prefix}.layer{l}"), d_model, cfg.heads, cfg.d_ff, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ToyDecoder {
            cfg: cfg.clone(),
            query,
            blocks,
            ln_f: LayerNorm::new(store, &format!("{prefix}.ln_f"), d_model)?,
            class_head: Linear::new(store, &format!("{prefix}.class"), d_model, LOGITS, true, rng)?,
            point_head: Linear::new(store, &format!("{prefix}.points"), d_model, 2 * cfg.points, true, rng)?,
        })
    }

    /// Decodes `mem_seg.len()` scenes whose tokens are stacked in `memory`.
    /// Returns class logits `[S·Q, LOGITS]` and points `[S·Q, 2P]` in
    /// normalized frame units.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        memory: Var,
        mem_seg: &[usize],
        drop: &mut Dropout,
    ) -> Result<(Var, Var)> {
        let q = self.cfg.queries;
        let table = g.param(store, self.query);
        let rows: Vec<usize> = (0..mem_seg.len()).flat_map(|_| 0..q).collect();
        let mut x = g.gather_rows(table, &rows)?;
        let q_seg = vec![q; mem_seg.len()];
        for b in &self.blocks {
            x = b.forward(g, store, x, &q_seg, memory, mem_seg, drop)?;
        }
        let x = self.ln_f.forward(g, store, x)?;
        let logits = self.class_head.forward(g, store, x)?;
        let points = self.point_head.forward(g, store, x)?;
        Ok((logits, points))
    }
}

/// Turns one scene's query outputs into predictions: class = most likely
/// real class, confidence = its probability, points mapped back to meters.
pub fn predictions(logits: &[f64], points: &[f64], queries: usize, range: RangeSpec) -> Vec<MapInstance> {
    let width = points.len() / queries;
    (0..queries)
        .map(|q| {
            let l = &logits[q * LOGITS..(q + 1) * LOGITS];
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
            let (best, p) = (0..LOGITS - 1)
                .map(|c| (c, (l[c] - m).exp() / z))
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            MapInstance {
                class: MapClass::ALL[best],
                points: points[q * width..(q + 1) * width]
                    .chunks(2)
                    .map(|c| [c[0] * range.length / 2.0, c[1] * range.width / 2.0])
                    .collect(),
                confidence: Some(p),
            }
        })
        .collect()
}
