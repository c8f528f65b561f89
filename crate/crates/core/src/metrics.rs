//! Vectorized map instances and Chamfer-distance average precision.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    Centerline,
    Boundary,
    Divider,
}

impl MapClass {
    pub const ALL: [MapClass; 3] = [MapClass::Centerline, MapClass::Boundary, MapClass::Divider];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MapClass::Centerline => "centerline",
            MapClass::Boundary => "boundary",
            MapClass::Divider => "divider",
        }
    }
}

impl fmt::Display for MapClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A class label and a fixed-length polyline in meters. Predictions carry a
/// confidence, ground truth does not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapInstance {
    pub class: MapClass,
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl MapInstance {
    pub fn gt(class: MapClass, points: Vec<Point>) -> Self {
        MapInstance {
            class,
            points,
            confidence: None,
        }
    }
}

/// Chamfer thresholds in meters.
pub const THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];

fn directed(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| dist(*p, *q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / a.len() as f64
}

/// Symmetric point-set Chamfer distance: the mean of both directed mean
/// nearest-point distances.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("chamfer distance of an empty polyline"));
    }
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

/// Predictions and ground truth of one scene. Predictions only ever match
/// ground truth of their own scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub preds: Vec<MapInstance>,
    pub gt: Vec<MapInstance>,
}

/// 101-point interpolated area under a precision/recall curve, given the
/// TP/FP flags of the ranked predictions and the number of positives.
fn interpolated_ap(tp_flags: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    // (true positives so far, precision) at every rank.
    let mut curve = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        tp += usize::from(hit);
        curve.push((tp, tp as f64 / (i + 1) as f64));
    }
    let mut total = 0.0;
    for r in 0..=100usize {
        // recall >= r/100, compared in integers
        total += curve
            .iter()
            .filter(|(tp, _)| tp * 100 >= r * positives)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    total / 101.0
}

/// Average precision of one class at Chamfer threshold `tau`, pooled over
/// scenes. `None` when the class has neither predictions nor ground truth.
///
/// Predictions are ranked by descending confidence, ties in input order.
/// Each takes the unmatched same-scene ground truth with the smallest
/// Chamfer distance and counts as a true positive if that distance is below
/// `tau`.
pub fn average_precision(scenes: &[SceneEval], class: MapClass, tau: f64) -> Result<Option<f64>> {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        for (i, p) in scene.preds.iter().enumerate() {
            if p.class == class {
                ranked.push((p.confidence.unwrap_or(0.0), s, i));
            }
        }
    }
    let positives: usize = scenes
        .iter()
        .map(|s| s.gt.iter().filter(|g| g.class == class).count())
        .sum();
    if ranked.is_empty() && positives == 0 {
        return Ok(None);
    }
    // Stable sort keeps input order among equal confidences.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut used: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.gt.len()]).collect();
    let mut flags = Vec::with_capacity(ranked.len());
    for &(_, s, i) in &ranked {
        let pred = &scenes[s].preds[i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in scenes[s].gt.iter().enumerate() {
            if g.class != class || used[s][j] {
                continue;
            }
            let c = chamfer(&pred.points, &g.points)?;
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, j));
            }
        }
        let hit = match best {
            Some((c, j)) if c < tau => {
                used[s][j] = true;
                true
            }
            _ => false,
        };
        flags.push(hit);
    }
    Ok(Some(interpolated_ap(&flags, positives)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApEntry {
    pub class: MapClass,
    pub tau: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApResult {
    pub entries: Vec<ApEntry>,
    /// Mean over the class × threshold grid; `None` when the grid is empty.
    #[serde(serialize_with = "map_or_undefined")]
    pub map: Option<f64>,
}

fn map_or_undefined<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("undefined"),
    }
}

impl ApResult {
    pub fn ap(&self, class: MapClass, tau: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.tau == tau)
            .map(|e| e.ap)
    }

    /// Mean AP of one class over the thresholds.
    pub fn class_ap(&self, class: MapClass) -> Option<f64> {
        let v: Vec<f64> = self.entries.iter().filter(|e| e.class == class).map(|e| e.ap).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn map_value(&self) -> f64 {
        self.map.unwrap_or(f64::NAN)
    }

    /// `class,tau,ap` rows followed by a `map` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,tau,ap\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.class, e.tau, e.ap));
        }
        match self.map {
            Some(m) => out.push_str(&format!("map,,{m}\n")),
            None => out.push_str("map,,undefined\n"),
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ap results serialize")
    }
}

/// AP for every class present in predictions or ground truth at every
/// threshold, and their mean.
pub fn map_over(scenes: &[SceneEval]) -> Result<ApResult> {
    map_over_thresholds(scenes, &THRESHOLDS)
}

pub fn map_over_thresholds(scenes: &[SceneEval], thresholds: &[f64]) -> Result<ApResult> {
    let mut entries = Vec::new();
    for class in MapClass::ALL {
        for &tau in thresholds {
            if let Some(ap) = average_precision(scenes, class, tau)? {
                entries.push(ApEntry { class, tau, ap });
            }
        }
    }
    let map = (!entries.is_empty()).then(|| entries.iter().map(|e| e.ap).sum::<f64>() / entries.len() as f64);
    Ok(ApResult { entries, map })
}
