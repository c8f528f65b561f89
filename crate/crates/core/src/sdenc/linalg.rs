//! Householder QR for small dense square matrices.

/// Factorizes the row-major `n × n` matrix `a` as `Q R`.
///
/// Returns `(q, r)`, both row-major: `q` orthogonal, `r` upper triangular.
pub fn householder_qr(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "householder_qr expects a square matrix");
    let mut r = a.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let norm = (k..n).map(|i| r[i * n + k].powi(2)).sum::<f64>().sqrt();
        let mut v: Vec<f64> = (k..n).map(|i| r[i * n + k]).collect();
        if norm == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        // Reflect onto -sign(x0)·‖x‖·e1 so v never suffers cancellation.
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= vn);
        reflect(&mut r, n, k, &v);
        for i in k + 1..n {
            r[i * n + k] = 0.0;
        }
        reflectors.push(v);
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        reflect(&mut q, n, k, v);
    }
    (q, r)
}

/// Applies `I - 2 v vᵀ` to rows `k..n` of `m`.
fn reflect(m: &mut [f64], n: usize, k: usize, v: &[f64]) {
    for j in 0..n {
        let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * m[(k + i) * n + j]).sum();
        if dot != 0.0 {
            for (i, vi) in v.iter().enumerate() {
                m[(k + i) * n + j] -= 2.0 * vi * dot;
            }
        }
    }
}
