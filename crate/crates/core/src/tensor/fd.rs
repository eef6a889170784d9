//! Central finite differences — the independent oracle the reverse-mode
//! engine is checked against. Lives in `src` (not test code) because the
//! `verify` CLI command re-runs the gradient cross-check on demand.

use super::Tensor;

/// Default step for the central difference, chosen for f64: truncation error
/// O(h²)=1e-10 and cancellation error O(eps/h)≈1e-11 are balanced.
pub const FD_STEP: f64 = 1e-5;

/// Gradient of `f` at `x` by central differences: one pair of evaluations per
/// coordinate, `(f(x+h·e_i) − f(x−h·e_i)) / 2h`.
pub fn finite_difference_gradient<F>(f: F, x: &[f64], shape: &[usize], h: f64) -> Vec<f64>
where
    F: Fn(&Tensor) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&Tensor::from_vec(probe.clone(), shape));
        probe[i] = orig - h;
        let fm = f(&Tensor::from_vec(probe.clone(), shape));
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between an analytic gradient and its
/// finite-difference counterpart, with an absolute floor so near-zero entries
/// do not blow the ratio up.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
