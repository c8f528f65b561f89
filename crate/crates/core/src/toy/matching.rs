//! Bipartite matching of queries to ground truth and the set-prediction loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MapInstance;
use crate::osm::RangeSpec;
use crate::tensor::{Graph, Tensor, Var};

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`), by the potential-based Hungarian method.
///
/// Returns the column of each row. Among equally cheap columns the scan
/// prefers the lower index.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if n > m || cost.iter().any(|r| r.len() != m) {
        return Err(Error::contract(format!("cannot assign {n} rows to {m} columns")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::contract("assignment costs must be finite"));
    }
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Weight of the point term in both the matching cost and the loss.
    pub lambda: f64,
    /// Cross-entropy weight of queries supervised toward "no object".
    pub no_object_weight: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            lambda: 5.0,
            no_object_weight: 0.1,
        }
    }
}

/// Ground-truth points in normalized frame units, `[x/(L/2), y/(W/2)]`
/// flattened.
pub fn normalized(points: &[[f64; 2]], range: RangeSpec) -> Vec<f64> {
    points
        .iter()
        .flat_map(|p| [p[0] / (range.length / 2.0), p[1] / (range.width / 2.0)])
        .collect()
}

fn reversed(flat: &[f64]) -> Vec<f64> {
    flat.chunks(2).rev().flatten().copied().collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute coordinate difference to the nearer orientation of the
/// target, and whether that orientation is the reversed one.
pub fn point_cost(pred: &[f64], target: &[f64]) -> (f64, bool) {
    let fwd = l1(pred, target);
    let bwd = l1(pred, &reversed(target));
    if bwd < fwd {
        (bwd, true)
    } else {
        (fwd, false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub gt: usize,
    pub query: usize,
    pub reversed: bool,
}

/// Cost matrix (rows = ground truth, columns = queries) of
/// `−log p(class) + λ·L1` over the nearer orientation.
pub fn cost_matrix(
    log_probs: &[f64],
    points: &[f64],
    queries: usize,
    gt: &[MapInstance],
    range: RangeSpec,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    let classes = log_probs.len() / queries.max(1);
    let width = points.len() / queries.max(1);
    if log_probs.len() != classes * queries || points.len() != width * queries {
        return Err(Error::contract("prediction arrays do not split into queries"));
    }
    gt.iter()
        .map(|g| {
            let target = normalized(&g.points, range);
            if target.len() != width {
                return Err(Error::contract(format!(
                    "ground truth has {} coordinates, predictions {width}",
                    target.len()
                )));
            }
            Ok((0..queries)
                .map(|q| {
                    let lp = log_probs[q * classes + g.class.index()];
                    -lp + lambda * point_cost(&points[q * width..(q + 1) * width], &target).0
                })
                .collect())
        })
        .collect()
}

/// Optimal matching of one scene's ground truth to its queries.
pub fn match_scene(
    log_probs: &[f64],
    points: &[f64],
    queries: usize,
    gt: &[MapInstance],
    range: RangeSpec,
    lambda: f64,
) -> Result<Vec<Match>> {
    if gt.len() > queries {
        return Err(Error::contract(format!(
            "{} ground-truth instances exceed {queries} queries",
            gt.len()
        )));
    }
    let cost = cost_matrix(log_probs, points, queries, gt, range, lambda)?;
    let cols = hungarian(&cost)?;
    let width = points.len() / queries;
    Ok(cols
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let target = normalized(&gt[i].points, range);
            Match {
                gt: i,
                query: q,
                reversed: point_cost(&points[q * width..(q + 1) * width], &target).1,
            }
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct SetLoss {
    pub total: Var,
    pub class_loss: f64,
    pub point_loss: f64,
    pub matches: Vec<Vec<Match>>,
}

/// Set-prediction loss over `scenes` stacked blocks of `queries` rows.
///
/// Matched queries are pushed toward their ground-truth class and points,
/// all others toward the trailing "no object" class. The cross-entropy is a
/// weighted mean (unmatched weight `no_object_weight`); the point term is
/// `λ` times the mean absolute error over matched queries, in normalized
/// units and the matched orientation.
pub fn set_loss(
    g: &mut Graph,
    logits: Var,
    points: Var,
    queries: usize,
    gt: &[&[MapInstance]],
    range: RangeSpec,
    cfg: &MatchConfig,
) -> Result<SetLoss> {
    let (rows, classes) = g.rows_cols(logits);
    let (prow, width) = g.rows_cols(points);
    if rows != queries * gt.len() || prow != rows {
        return Err(Error::contract(format!(
            "{rows} prediction rows for {} scenes of {queries} queries",
            gt.len()
        )));
    }
    let lp = g.log_softmax(logits);
    let lp_vals = g.value(lp).to_vec();
    let pt_vals = g.value(points).to_vec();
    let no_object = classes - 1;
    let mut target = vec![no_object; rows];
    let mut weight = vec![cfg.no_object_weight; rows];
    let mut matched_rows = Vec::new();
    let mut matched_targets = Vec::new();
    let mut all = Vec::with_capacity(gt.len());
    for (s, scene_gt) in gt.iter().enumerate() {
        let base = s * queries;
        let ms = match_scene(
            &lp_vals[base * classes..(base + queries) * classes],
            &pt_vals[base * width..(base + queries) * width],
            queries,
            scene_gt,
            range,
            cfg.lambda,
        )?;
        for m in &ms {
            let row = base + m.query;
            target[row] = scene_gt[m.gt].class.index();
            weight[row] = 1.0;
            matched_rows.push(row);
            let t = normalized(&scene_gt[m.gt].points, range);
            matched_targets.extend(if m.reversed { reversed(&t) } else { t });
        }
        all.push(ms);
    }
    let flat: Vec<usize> = target.iter().enumerate().map(|(r, &c)| r * classes + c).collect();
    let picked = g.pick(lp, &flat)?;
    let weighted = g.mul_const(picked, &weight)?;
    let sum = g.sum(weighted);
    let wsum: f64 = weight.iter().sum();
    let class_term = g.scale(sum, -1.0 / wsum);
    let class_loss = g.scalar(class_term);
    let (total, point_loss) = if matched_rows.is_empty() {
        (class_term, 0.0)
    } else {
        let pred = g.gather_rows(points, &matched_rows)?;
        let t = g.constant(&Tensor::matrix(matched_rows.len(), width, matched_targets)?);
        let d = g.sub(pred, t)?;
        let a = g.abs(d);
        let m = g.mean(a);
        let point_loss = g.scalar(m);
        let pt = g.scale(m, cfg.lambda);
        (g.add(class_term, pt)?, point_loss)
    };
    Ok(SetLoss {
        total,
        class_loss,
        point_loss,
        matches: all,
    })
}
