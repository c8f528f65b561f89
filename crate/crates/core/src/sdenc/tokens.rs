use std::collections::BTreeMap;

use serde::Serialize;

use super::orf::OrfTable;
use super::posenc::posenc;
use super::SdEncoderConfig;
use crate::error::{Error, Result};
use crate::frame::{FrameGeometry, SdFrame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Point,
    PolylinePoint,
    Relation,
}

/// One raw SD token before the learned input projection.
#[derive(Clone, Debug, PartialEq)]
pub struct SdToken {
    pub element: i64,
    pub kind: TokenKind,
    /// Point index within a polyline, or member-pair index within a relation.
    pub index: usize,
    pub pos: Vec<f64>,
    pub tag: Vec<f64>,
    pub ident: Vec<f64>,
}

impl SdToken {
    /// `[pos ‖ tag ‖ ident]`.
    pub fn raw(&self) -> Vec<f64> {
        let mut r = Vec::with_capacity(self.pos.len() + self.tag.len() + self.ident.len());
        r.extend_from_slice(&self.pos);
        r.extend_from_slice(&self.tag);
        r.extend_from_slice(&self.ident);
        r
    }
}

fn ident_of(orf: &OrfTable, id: i64) -> Result<&[f64]> {
    orf.row(id)
        .ok_or_else(|| Error::contract(format!("element {id} has no identifier row")))
}

/// Builds the point-level token sequence of a frame, in element order.
///
/// Points give one token, polylines one per resampled point, relations one
/// per member pair with a zero positional segment. Point and polyline tokens
/// carry their own identifier twice; relation tokens carry both members'.
pub fn assemble_tokens(
    frame: &SdFrame,
    embeddings: &BTreeMap<i64, Vec<f64>>,
    orf: &OrfTable,
    cfg: &SdEncoderConfig,
) -> Result<Vec<SdToken>> {
    if orf.d_orf != cfg.d_orf {
        return Err(Error::contract(format!(
            "identifier width {} does not match d_orf {}",
            orf.d_orf, cfg.d_orf
        )));
    }
    let mut out = Vec::new();
    for e in &frame.elements {
        let tag = embeddings
            .get(&e.id)
            .ok_or_else(|| Error::contract(format!("element {} has no tag embedding", e.id)))?;
        if tag.len() != cfg.d_tag {
            return Err(Error::contract(format!(
                "tag embedding of {} has width {}, expected {}",
                e.id,
                tag.len(),
                cfg.d_tag
            )));
        }
        match &e.geometry {
            FrameGeometry::Point(p) => {
                let own = ident_of(orf, e.id)?;
                out.push(SdToken {
                    element: e.id,
                    kind: TokenKind::Point,
                    index: 0,
                    pos: posenc(p[0], p[1], cfg.d_pos, frame.range)?,
                    tag: tag.clone(),
                    ident: [own, own].concat(),
                });
            }
            FrameGeometry::Polyline(pts) => {
                let own = ident_of(orf, e.id)?;
                for (i, p) in pts.iter().enumerate() {
                    out.push(SdToken {
                        element: e.id,
                        kind: TokenKind::PolylinePoint,
                        index: i,
                        pos: posenc(p[0], p[1], cfg.d_pos, frame.range)?,
                        tag: tag.clone(),
                        ident: [own, own].concat(),
                    });
                }
            }
            FrameGeometry::Relation(pairs) => {
                for (i, &(a, b)) in pairs.iter().enumerate() {
                    out.push(SdToken {
                        element: e.id,
                        kind: TokenKind::Relation,
                        index: i,
                        pos: vec![0.0; cfg.d_pos],
                        tag: tag.clone(),
                        ident: [ident_of(orf, a)?, ident_of(orf, b)?].concat(),
                    });
                }
            }
        }
    }
    Ok(out)
}
