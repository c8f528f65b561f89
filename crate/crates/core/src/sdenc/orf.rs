//! Orthogonal random features used as element identifiers.

use rand_distr::{Distribution, StandardNormal};

use super::linalg::householder_qr;
use crate::error::{Error, Result};
use crate::rng;

/// One unit-norm identifier row per element id, ids ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct OrfTable {
    pub d_orf: usize,
    pub ids: Vec<i64>,
    pub rows: Vec<Vec<f64>>,
    /// Set when the table holds more elements than `d_orf` and its rows are
    /// normalized Gaussians, only approximately orthogonal.
    pub gaussian_fallback: bool,
}

impl OrfTable {
    pub fn row(&self, id: i64) -> Option<&[f64]> {
        self.ids.binary_search(&id).ok().map(|i| self.rows[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Largest `|G - I|` entry of the Gram matrix of the rows.
    pub fn max_gram_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.rows.iter().enumerate() {
            for (j, b) in self.rows.iter().enumerate().skip(i) {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Exchanges the identifiers of two elements.
    pub fn swap(&mut self, a: i64, b: i64) -> Result<()> {
        let ia = self
            .ids
            .binary_search(&a)
            .map_err(|_| Error::contract(format!("no identifier for {a}")))?;
        let ib = self
            .ids
            .binary_search(&b)
            .map_err(|_| Error::contract(format!("no identifier for {b}")))?;
        self.rows.swap(ia, ib);
        Ok(())
    }
}

/// Rows of the Q factor of a seeded `d_orf × d_orf` Gaussian matrix, assigned
/// to the (deduplicated) ids in ascending order. More ids than `d_orf` is a
/// capacity error.
pub fn generate_orf(ids: &[i64], d_orf: usize, seed: u64) -> Result<OrfTable> {
    generate_orf_with(ids, d_orf, seed, false)
}

/// As [`generate_orf`], but with `gaussian_fallback` an oversized id set gets
/// normalized Gaussian rows instead of an error.
pub fn generate_orf_with(ids: &[i64], d_orf: usize, seed: u64, gaussian_fallback: bool) -> Result<OrfTable> {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    if n == 0 || d_orf == 0 {
        return Err(Error::contract(
            "identifier table needs at least one element and d_orf > 0",
        ));
    }
    let mut rng = rng::derive(seed, "orf");
    if n > d_orf {
        if !gaussian_fallback {
            return Err(Error::Capacity {
                elements: n,
                capacity: d_orf,
            });
        }
        let rows = (0..n)
            .map(|_| {
                let mut r: Vec<f64> = (0..d_orf).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter_mut().for_each(|x| *x /= norm);
                sign_fix(&mut r);
                r
            })
            .collect();
        return Ok(OrfTable {
            d_orf,
            ids,
            rows,
            gaussian_fallback: true,
        });
    }
    let gauss: Vec<f64> = (0..d_orf * d_orf).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (q, _) = householder_qr(&gauss, d_orf);
    let rows = q
        .chunks(d_orf)
        .take(n)
        .map(|r| {
            let mut r = r.to_vec();
            sign_fix(&mut r);
            r
        })
        .collect();
    Ok(OrfTable {
        d_orf,
        ids,
        rows,
        gaussian_fallback: false,
    })
}

fn sign_fix(row: &mut [f64]) {
    if row.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0) {
        row.iter_mut().for_each(|x| *x = -*x);
    }
}
