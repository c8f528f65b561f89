use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::osm::RangeSpec;

/// Fixed sin/cos encoding of a frame coordinate.
///
/// Coordinates are normalized by the frame half-extents, `u = x / (L/2)` and
/// `v = y / (W/2)`, then for `k = 0..d_pos/4` the block
/// `[sin(u·T_k), cos(u·T_k), sin(v·T_k), cos(v·T_k)]` is emitted with
/// `T_k = π · 10000^(-4k/d_pos)`.
pub fn posenc(x: f64, y: f64, d_pos: usize, range: RangeSpec) -> Result<Vec<f64>> {
    if d_pos == 0 || !d_pos.is_multiple_of(4) {
        return Err(Error::contract(format!(
            "d_pos must be a positive multiple of 4, got {d_pos}"
        )));
    }
    let u = x / (range.length / 2.0);
    let v = y / (range.width / 2.0);
    let mut out = Vec::with_capacity(d_pos);
    for k in 0..d_pos / 4 {
        let t = PI * 10000f64.powf(-4.0 * k as f64 / d_pos as f64);
        out.extend([(u * t).sin(), (u * t).cos(), (v * t).sin(), (v * t).cos()]);
    }
    Ok(out)
}
