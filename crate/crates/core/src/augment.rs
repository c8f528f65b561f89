//! SD-prior augmentations: position noise, element dropping and tag masking.
//!
//! Random draws are keyed by element id, so the outcome does not depend on
//! element order or on coordinate values.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::RelevanceConfig;
use crate::error::{Error, Result};
use crate::frame::{FrameKind, SdFrame};
use crate::geom::{rotate, Point};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagMaskConfig {
    /// Probability that an element has its tags masked at all.
    pub element_aug_rate: f64,
    /// Per-tag drop probability within a selected element.
    pub tag_drop_rate: f64,
    pub non_relevant_only: bool,
}

impl Default for TagMaskConfig {
    fn default() -> Self {
        TagMaskConfig {
            element_aug_rate: 0.0,
            tag_drop_rate: 0.0,
            non_relevant_only: true,
        }
    }
}

/// All-zero defaults leave frames untouched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub element_drop_rate: f64,
    /// One rigid motion for the whole frame instead of one per element.
    pub locally_constant: bool,
    /// Translation standard deviation per axis, meters.
    pub sigma_trans: f64,
    /// Rotation standard deviation, degrees.
    pub sigma_rot: f64,
    pub tag_mask: TagMaskConfig,
}

impl AugmentConfig {
    /// Reference settings: drop 0.1, locally constant noise of 1 m and 2°,
    /// masking half the elements at 0.6 on non-relevant tags.
    pub fn reference() -> Self {
        AugmentConfig {
            element_drop_rate: 0.1,
            locally_constant: true,
            sigma_trans: 1.0,
            sigma_rot: 2.0,
            tag_mask: TagMaskConfig {
                element_aug_rate: 0.5,
                tag_drop_rate: 0.6,
                non_relevant_only: true,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("element_drop_rate", self.element_drop_rate),
            ("element_aug_rate", self.tag_mask.element_aug_rate),
            ("tag_drop_rate", self.tag_mask.tag_drop_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::contract(format!("{name} {r} outside [0, 1]")));
            }
        }
        for (name, s) in [("sigma_trans", self.sigma_trans), ("sigma_rot", self.sigma_rot)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::contract(format!(
                    "{name} must be finite and non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

fn element_rng(seed: u64, op: &str, id: i64) -> rng::Rng {
    rng::derive(seed, &format!("{op}:{id}"))
}

/// Translation and rotation (radians) drawn from `r`.
fn rigid_motion(r: &mut rng::Rng, cfg: &AugmentConfig) -> (Point, f64) {
    let mut n = || -> f64 { StandardNormal.sample(r) };
    let t = [cfg.sigma_trans * n(), cfg.sigma_trans * n()];
    (t, cfg.sigma_rot.to_radians() * n())
}

fn apply_motion(points: &mut [Point], (t, angle): (Point, f64)) {
    for p in points {
        let q = rotate(*p, angle);
        *p = [q[0] + t[0], q[1] + t[1]];
    }
}

/// Rotates about the ego origin, then translates. Either one motion for the
/// frame (locally constant) or one per geometric element.
pub fn position_noise(frame: &SdFrame, cfg: &AugmentConfig, seed: u64) -> Result<SdFrame> {
    cfg.validate()?;
    let mut out = frame.clone();
    if cfg.sigma_trans == 0.0 && cfg.sigma_rot == 0.0 {
        return Ok(out);
    }
    let shared = cfg
        .locally_constant
        .then(|| rigid_motion(&mut rng::derive(seed, "position-noise"), cfg));
    for e in &mut out.elements {
        if e.kind() == FrameKind::Relation {
            continue;
        }
        let motion = shared.unwrap_or_else(|| rigid_motion(&mut element_rng(seed, "position-noise", e.id), cfg));
        apply_motion(e.points_mut(), motion);
    }
    Ok(out)
}

/// Drops each point and polyline with probability `rate`, then every
/// relation that lost a member.
pub fn element_drop(frame: &SdFrame, rate: f64, seed: u64) -> Result<SdFrame> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::contract(format!("element drop rate {rate} outside [0, 1]")));
    }
    let mut out = frame.clone();
    out.elements
        .retain(|e| e.kind() == FrameKind::Relation || !element_rng(seed, "element-drop", e.id).random_bool(rate));
    out.prune_relations();
    Ok(out)
}

/// Masks tags of a random subset of elements. Relevant tags are kept when
/// `non_relevant_only` is set. An element may lose all of its tags.
pub fn tag_mask(frame: &SdFrame, cfg: &TagMaskConfig, relevance: &RelevanceConfig, seed: u64) -> Result<SdFrame> {
    for (name, r) in [
        ("element_aug_rate", cfg.element_aug_rate),
        ("tag_drop_rate", cfg.tag_drop_rate),
    ] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::contract(format!("{name} {r} outside [0, 1]")));
        }
    }
    let mut out = frame.clone();
    for e in &mut out.elements {
        let mut r = element_rng(seed, "tag-mask", e.id);
        if !r.random_bool(cfg.element_aug_rate) {
            continue;
        }
        e.tags.retain(|k, _| {
            let eligible = !cfg.non_relevant_only || relevance.is_irrelevant(k);
            // draw for every tag so eligibility does not shift later draws
            let drop = r.random_bool(cfg.tag_drop_rate);
            !(eligible && drop)
        });
    }
    Ok(out)
}

/// Element drop, tag masking and position noise in that order, each on its
/// own stream of `seed`.
pub fn augment(frame: &SdFrame, cfg: &AugmentConfig, relevance: &RelevanceConfig, seed: u64) -> Result<SdFrame> {
    cfg.validate()?;
    let f = element_drop(frame, cfg.element_drop_rate, seed)?;
    let f = tag_mask(&f, &cfg.tag_mask, relevance, seed)?;
    position_noise(&f, cfg, seed)
}
