//! Planar polyline helpers in ego-centric meters.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Cumulative arc length at each vertex, starting at 0.
pub fn arc_lengths(points: &[Point]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in points.windows(2) {
        acc += dist(w[0], w[1]);
        out.push(acc);
    }
    out
}

/// The point at arc length `s` along `points`, given their cumulative lengths.
pub fn point_at(points: &[Point], cum: &[f64], s: f64) -> Point {
    let last = points.len() - 1;
    if s <= 0.0 {
        return points[0];
    }
    if s >= cum[last] {
        return points[last];
    }
    // First vertex strictly beyond s.
    let j = cum.partition_point(|&c| c <= s);
    let i = j - 1;
    let seg = cum[j] - cum[i];
    if seg == 0.0 {
        return points[i];
    }
    let t = (s - cum[i]) / seg;
    [
        points[i][0] + t * (points[j][0] - points[i][0]),
        points[i][1] + t * (points[j][1] - points[i][1]),
    ]
}

/// `p` points at equal arc-length spacing along `points`. The endpoints are
/// copied, not interpolated, so they survive bit for bit.
pub fn resample(points: &[Point], p: usize) -> Result<Vec<Point>> {
    if points.len() < 2 {
        return Err(Error::contract(format!(
            "resampling needs at least 2 points, got {}",
            points.len()
        )));
    }
    if p < 2 {
        return Err(Error::contract(format!("cannot resample to {p} points")));
    }
    let cum = arc_lengths(points);
    let total = cum[cum.len() - 1];
    let first = points[0];
    let last = points[points.len() - 1];
    if total == 0.0 {
        return Ok(vec![first; p]);
    }
    let mut out = Vec::with_capacity(p);
    out.push(first);
    for k in 1..p - 1 {
        let s = total * k as f64 / (p - 1) as f64;
        out.push(point_at(points, &cum, s));
    }
    out.push(last);
    Ok(out)
}

/// Smallest distance from `q` to any segment of `points`.
pub fn distance_to_polyline(q: Point, points: &[Point]) -> f64 {
    if points.len() == 1 {
        return dist(q, points[0]);
    }
    points
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
            };
            dist(q, [a[0] + t * d[0], a[1] + t * d[1]])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Axis-aligned rectangle centered on the origin with half extents `hx`, `hy`.
/// Boundaries count as inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenteredRect {
    pub hx: f64,
    pub hy: f64,
}

impl CenteredRect {
    pub fn contains(&self, p: Point) -> bool {
        p[0].abs() <= self.hx && p[1].abs() <= self.hy
    }

    /// Liang–Barsky: does the closed segment `a`–`b` touch the rectangle?
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        let d = [b[0] - a[0], b[1] - a[1]];
        let (mut t0, mut t1) = (0.0f64, 1.0f64);
        let checks = [
            (-d[0], a[0] + self.hx),
            (d[0], self.hx - a[0]),
            (-d[1], a[1] + self.hy),
            (d[1], self.hy - a[1]),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn intersects_polyline(&self, points: &[Point]) -> bool {
        match points {
            [] => false,
            [p] => self.contains(*p),
            _ => points.windows(2).any(|w| self.intersects_segment(w[0], w[1])),
        }
    }
}

/// Rotation by `angle` radians counter-clockwise about the origin.
pub fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_segment_resamples_uniformly() {
        let out = resample(&[[0.0, 0.0], [9.0, 0.0]], 10).unwrap();
        for (i, p) in out.iter().enumerate() {
            assert!((p[0] - i as f64).abs() < 1e-12 && p[1] == 0.0, "{p:?}");
        }
    }

    #[test]
    fn l_shape_midpoint_is_the_corner() {
        let out = resample(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 3).unwrap();
        assert_eq!(out, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(resample(&[[2.0, 3.0], [2.0, 3.0]], 4).unwrap(), vec![[2.0, 3.0]; 4]);
        assert!(matches!(resample(&[[0.0, 0.0]], 4), Err(Error::Contract(_))));
        assert!(resample(&[[0.0, 0.0], [1.0, 0.0]], 1).is_err());
    }

    #[test]
    fn segment_rectangle_cases() {
        let r = CenteredRect { hx: 2.0, hy: 1.0 };
        assert!(r.intersects_segment([-5.0, 0.0], [5.0, 0.0]));
        assert!(!r.intersects_segment([-5.0, 3.0], [5.0, 3.0]));
        assert!(r.intersects_segment([2.0, 5.0], [2.0, -5.0]), "edge counts");
        assert!(!r.intersects_segment([3.0, 0.0], [6.0, 0.0]));
        assert!(r.intersects_segment([0.5, 0.5], [0.5, 0.5]), "point segment inside");
        assert!(!r.intersects_segment([3.5, 0.0], [0.0, 3.5]), "misses the corner");
    }
}
