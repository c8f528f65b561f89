//! Straight-line reference implementations of the model forward passes.
//! They read parameters by name and use nested vectors and explicit loops,
//! sharing no code with the graph.

#![allow(dead_code)]

use sdprior::tensor::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn param(store: &ParamStore, name: &str) -> Mat {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.get(id);
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn try_param(store: &ParamStore, name: &str) -> Option<Mat> {
    store.id(name).map(|_| param(store, name))
}

pub fn linear(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let w = param(store, &format!("{name}.w"));
    let b = try_param(store, &format!("{name}.b"));
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| {
                    let mut s = b.as_ref().map_or(0.0, |b| b[0][j]);
                    for (i, xi) in row.iter().enumerate() {
                        s += xi * w[i][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm_plain(x: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

pub fn layer_norm(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let g = param(store, &format!("{name}.gamma"));
    let b = param(store, &format!("{name}.beta"));
    layer_norm_plain(x)
        .into_iter()
        .map(|row| row.iter().enumerate().map(|(j, v)| v * g[0][j] + b[0][j]).collect())
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

/// Full attention of `xq` over `xkv` (one sequence each).
pub fn mha(store: &ParamStore, name: &str, xq: &Mat, xkv: &Mat, heads: usize) -> Mat {
    let q = linear(store, &format!("{name}.q"), xq);
    let k = linear(store, &format!("{name}.k"), xkv);
    let v = linear(store, &format!("{name}.v"), xkv);
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; xq.len()];
    for h in 0..heads {
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..k.len() {
                for c in 0..dh {
                    out[i][h * dh + c] += e[j] / z * v[j][h * dh + c];
                }
            }
        }
    }
    linear(store, &format!("{name}.o"), &out)
}

pub fn feed_forward(store: &ParamStore, name: &str, x: &Mat) -> Mat {
    let h: Mat = linear(store, &format!("{name}.up"), x)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    linear(store, &format!("{name}.down"), &h)
}

pub fn encoder_block(store: &ParamStore, name: &str, x: &Mat, heads: usize) -> Mat {
    let n = layer_norm(store, &format!("{name}.ln1"), x);
    let h = add(x, &mha(store, &format!("{name}.attn"), &n, &n, heads));
    let n = layer_norm(store, &format!("{name}.ln2"), &h);
    add(&h, &feed_forward(store, &format!("{name}.ff"), &n))
}

pub fn decoder_block(store: &ParamStore, name: &str, x: &Mat, mem: &Mat, heads: usize) -> Mat {
    let n = layer_norm(store, &format!("{name}.ln1"), x);
    let h = add(x, &mha(store, &format!("{name}.self_attn"), &n, &n, heads));
    let n = layer_norm(store, &format!("{name}.ln2"), &h);
    let h = add(&h, &mha(store, &format!("{name}.cross_attn"), &n, mem, heads));
    let n = layer_norm(store, &format!("{name}.ln3"), &h);
    add(&h, &feed_forward(store, &format!("{name}.ff"), &n))
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Text encoder embedding of one id sequence.
pub fn text_embedding(store: &ParamStore, prefix: &str, ids: &[usize], layers: usize, heads: usize) -> Vec<f64> {
    let tok = param(store, &format!("{prefix}.tok"));
    let pos = param(store, &format!("{prefix}.pos"));
    let mut x: Mat = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| tok[id].iter().zip(&pos[p]).map(|(a, b)| a + b).collect())
        .collect();
    for l in 0..layers {
        x = encoder_block(store, &format!("{prefix}.layer{l}"), &x, heads);
    }
    let cls = layer_norm(store, &format!("{prefix}.ln_f"), &vec![x[0].clone()]);
    normalize(&linear(store, &format!("{prefix}.proj"), &cls)[0])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// SD encoder over one frame's raw token rows.
pub fn sd_encoding(store: &ParamStore, prefix: &str, raw: &Mat, layers: usize, heads: usize) -> Mat {
    let mut x = linear(store, &format!("{prefix}.input"), raw);
    for l in 0..layers {
        x = encoder_block(store, &format!("{prefix}.layer{l}"), &x, heads);
    }
    layer_norm(store, &format!("{prefix}.ln_f"), &x)
}

/// Chamfer distance by an explicit double loop.
pub fn chamfer_loop(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut ab = 0.0;
    for p in a {
        let mut m = f64::INFINITY;
        for q in b {
            let d = (p[0] - q[0]).hypot(p[1] - q[1]);
            if d < m {
                m = d;
            }
        }
        ab += m;
    }
    let mut ba = 0.0;
    for q in b {
        let mut m = f64::INFINITY;
        for p in a {
            let d = (q[0] - p[0]).hypot(q[1] - p[1]);
            if d < m {
                m = d;
            }
        }
        ba += m;
    }
    0.5 * (ab / a.len() as f64 + ba / b.len() as f64)
}

/// Brute-force AP: ranks by repeated selection of the most confident
/// remaining prediction, matches each against every ground truth of its
/// scene, and reads the interpolated precision off every prefix.
pub fn ap_oracle(scenes: &[sdprior::metrics::SceneEval], class: sdprior::metrics::MapClass, tau: f64) -> Option<f64> {
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    let mut positives = 0usize;
    for (s, sc) in scenes.iter().enumerate() {
        for (i, p) in sc.preds.iter().enumerate() {
            if p.class == class {
                pool.push((p.confidence.unwrap(), s, i));
            }
        }
        positives += sc.gt.iter().filter(|g| g.class == class).count();
    }
    if pool.is_empty() && positives == 0 {
        return None;
    }
    let mut ranked = Vec::new();
    while !pool.is_empty() {
        let mut best = 0;
        for k in 1..pool.len() {
            if pool[k].0 > pool[best].0 {
                best = k;
            }
        }
        ranked.push(pool.remove(best));
    }
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut hits = Vec::new();
    for &(_, s, i) in &ranked {
        let mut choice: Option<(f64, usize)> = None;
        for (j, g) in scenes[s].gt.iter().enumerate() {
            if g.class != class || taken.contains(&(s, j)) {
                continue;
            }
            let c = chamfer_loop(&scenes[s].preds[i].points, &g.points);
            if choice.is_none_or(|(bc, _)| c < bc) {
                choice = Some((c, j));
            }
        }
        match choice {
            Some((c, j)) if c < tau => {
                taken.push((s, j));
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    if positives == 0 {
        return Some(0.0);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let mut pmax: f64 = 0.0;
        for n in 1..=hits.len() {
            let tp = hits[..n].iter().filter(|h| **h).count();
            if tp as f64 / positives as f64 >= r {
                pmax = pmax.max(tp as f64 / n as f64);
            }
        }
        sum += pmax;
    }
    Some(sum / 101.0)
}

/// Random small scenes for metric checks: up to `max_inst` ground-truth
/// instances, predictions jittered copies or random clutter.
pub fn random_eval_scenes(count: usize, max_inst: usize, seed: u64) -> Vec<sdprior::metrics::SceneEval> {
    use rand::Rng as _;
    use sdprior::metrics::{MapClass, MapInstance, SceneEval};
    let mut r = sdprior::rng::seeded(seed);
    let line = |r: &mut sdprior::rng::Rng| -> Vec<[f64; 2]> {
        let (x0, y0, a) = (
            r.random_range(-20.0..20.0),
            r.random_range(-10.0..10.0),
            r.random_range(-3.2..3.2f64),
        );
        (0..6)
            .map(|i| [x0 + i as f64 * a.cos(), y0 + i as f64 * a.sin()])
            .collect()
    };
    (0..count)
        .map(|_| {
            let n_gt = r.random_range(0..=max_inst);
            let gt: Vec<MapInstance> = (0..n_gt)
                .map(|_| MapInstance::gt(MapClass::ALL[r.random_range(0..3)], line(&mut r)))
                .collect();
            let mut preds = Vec::new();
            for g in &gt {
                if r.random_bool(0.8) {
                    let j = r.random_range(0.0..2.0);
                    let dx = r.random_range(-j..=j);
                    let dy = r.random_range(-j..=j);
                    let class = if r.random_bool(0.85) {
                        g.class
                    } else {
                        MapClass::ALL[r.random_range(0..3)]
                    };
                    preds.push(MapInstance {
                        class,
                        points: g.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
                        // Coarse confidences so ties occur.
                        confidence: Some((r.random_range(0..10) as f64) / 10.0),
                    });
                }
            }
            for _ in 0..r.random_range(0..3) {
                preds.push(MapInstance {
                    class: MapClass::ALL[r.random_range(0..3)],
                    points: line(&mut r),
                    confidence: Some((r.random_range(0..10) as f64) / 10.0),
                });
            }
            SceneEval { preds, gt }
        })
        .collect()
}

/// Decoder output for one scene: learned queries through the decoder
/// blocks against `memory`, final norm, then class logits and points.
pub fn toy_decoding(store: &ParamStore, prefix: &str, memory: &Mat, layers: usize, heads: usize) -> (Mat, Mat) {
    let mut x = param(store, &format!("{prefix}.query"));
    for l in 0..layers {
        x = decoder_block(store, &format!("{prefix}.layer{l}"), &x, memory, heads);
    }
    let x = layer_norm(store, &format!("{prefix}.ln_f"), &x);
    (
        linear(store, &format!("{prefix}.class"), &x),
        linear(store, &format!("{prefix}.points"), &x),
    )
}

/// Smallest total cost over every injective row-to-column assignment.
pub fn assignment_brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    if cost.is_empty() {
        return 0.0;
    }
    go(cost, 0, &mut vec![false; cost[0].len()])
}
