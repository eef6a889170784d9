//! Dense symmetric eigen-routines for the spectral attack machinery.
//!
//! Two independent paths on purpose: [`power_iteration`] is the production
//! route to the top eigenpair of the (small, K×K) reduced Fisher matrix, and
//! [`jacobi_eigen`] is a full-spectrum Jacobi-rotation solver used to
//! cross-check it — by the `verify` command at runtime and by the oracle
//! tests against dense input-space Fisher matrices.

use crate::error::{Error, Result};

/// Row-major dense symmetric matrix view helper.
fn at(m: &[f64], n: usize, i: usize, j: usize) -> f64 {
    m[i * n + j]
}

fn mat_vec(m: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(v) {
            acc += a * b;
        }
        out[i] = acc;
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix by power
/// iteration. Deterministic: runs two fixed start vectors (all-ones, then an
/// index ramp) and keeps the converged pair with the larger eigenvalue —
/// a single start can sit exactly on a *non-dominant* eigenvector and
/// "converge" there, and the second basis breaks that degeneracy.
/// Convergence: relative residual ‖Av − λv‖ ≤ tol·|λ|.
///
/// Failure of both starts to converge within `max_iters` is an error, not a
/// silent wrong answer.
pub fn power_iteration(m: &[f64], n: usize, tol: f64, max_iters: usize) -> Result<(f64, Vec<f64>)> {
    assert_eq!(m.len(), n * n, "matrix must be {n}x{n}");
    assert!(n > 0, "empty matrix");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in 0..2 {
        let mut v = vec![1.0; n];
        if start == 1 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi = 1.0 + (i as f64 + 1.0) * 0.5;
            }
        }
        let nv = norm2(&v);
        for vi in v.iter_mut() {
            *vi /= nv;
        }
        let mut av = vec![0.0; n];
        for _ in 0..max_iters {
            mat_vec(m, n, &v, &mut av);
            let lambda: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            let mut resid = 0.0;
            for i in 0..n {
                let r = av[i] - lambda * v[i];
                resid += r * r;
            }
            if resid.sqrt() <= tol * lambda.abs().max(f64::MIN_POSITIVE) {
                if best.as_ref().map_or(true, |(bl, _)| lambda > *bl) {
                    best = Some((lambda, v.clone()));
                }
                break;
            }
            let nav = norm2(&av);
            if nav == 0.0 {
                // v is in the null space; the zero-matrix corner (λ = 0).
                if m.iter().all(|&x| x == 0.0) {
                    return Ok((0.0, v));
                }
                break; // dead start, try the other one
            }
            for i in 0..n {
                v[i] = av[i] / nav;
            }
        }
    }
    best.ok_or_else(|| {
        Error::Numeric(format!(
            "power iteration did not converge to tol {tol} within {max_iters} iterations (n = {n})"
        ))
    })
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvector `k` is `vectors[k]`. O(n³) per sweep — fine at the sizes the
/// oracles use (n ≲ 800).
pub fn jacobi_eigen(m: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(m.len(), n * n, "matrix must be {n}x{n}");
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += at(&a, n, i, j).powi(2);
            }
        }
        if off.sqrt() < 1e-13 * (1.0 + frobenius(&a, n)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = at(&a, n, p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = at(&a, n, p, p);
                let aqq = at(&a, n, q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // A ← JᵀAJ applied in place to rows/cols p,q.
                for k in 0..n {
                    let akp = at(&a, n, k, p);
                    let akq = at(&a, n, k, q);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = at(&a, n, p, k);
                    let aqk = at(&a, n, q, k);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = at(&v, n, k, p);
                    let vkq = at(&v, n, k, q);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| (at(&a, n, k, k), (0..n).map(|i| at(&v, n, i, k)).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("NaN eigenvalue"));
    let vals = pairs.iter().map(|p| p.0).collect();
    let vecs = pairs.into_iter().map(|p| p.1).collect();
    (vals, vecs)
}

fn frobenius(m: &[f64], n: usize) -> f64 {
    m.iter().take(n * n).map(|x| x * x).sum::<f64>().sqrt()
}
