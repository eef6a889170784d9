//! Fisher-information mathematics for a categorical classifier.
//!
//! For output probabilities p the output-space Fisher matrix is analytically
//! diagonal, `G_s = diag(1/p_i)`, so its trace is `Σ 1/p_i` — the quantity
//! the trainer penalizes. Pulling `G_s` back through the input Jacobian `J`
//! (rows `∇_x p_i`) gives the input-space matrix `G_x = Jᵀ G_s J`, whose top
//! eigenvector is the most KL-damaging perturbation direction. Instead of
//! touching the d×d matrix, [`ossa_direction`] solves the K×K reduction
//! `M = D^{1/2} J Jᵀ D^{1/2}` (same nonzero spectrum) and maps the winning
//! eigenvector back to input space.

use crate::error::{Error, Result};
use crate::linalg::power_iteration;
use crate::models::Network;
use crate::tensor::{Tensor, CLAMP_MIN};

const SIMPLEX_TOL: f64 = 1e-9;

/// A validated point on the probability simplex.
#[derive(Debug, Clone)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Numeric("probability vector is empty".into()));
        }
        if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numeric(format!("probability entry {v} out of range")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Numeric(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Output-space Fisher matrix, stored as its diagonal `1/clamp(p_i)`.
#[derive(Debug, Clone)]
pub struct OutputFim {
    pub diagonal: Vec<f64>,
}

impl OutputFim {
    pub fn trace(&self) -> f64 {
        self.diagonal.iter().sum()
    }
}

pub fn output_fim(p: &ProbabilityVector) -> OutputFim {
    OutputFim {
        diagonal: p.as_slice().iter().map(|&v| 1.0 / v.max(CLAMP_MIN)).collect(),
    }
}

/// `tr G_s = Σ 1/clamp(p_i)`. Always ≥ K², with equality only at uniform p.
pub fn fim_trace(p: &ProbabilityVector) -> f64 {
    p.as_slice().iter().map(|&v| 1.0 / v.max(CLAMP_MIN)).sum()
}

/// The K×d Jacobian of output probabilities w.r.t. the input, plus the
/// probabilities it was taken at.
#[derive(Debug, Clone)]
pub struct InputJacobian {
    rows: Vec<f64>,
    pub k: usize,
    pub d: usize,
    pub probs: Vec<f64>,
}

impl InputJacobian {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    /// `J η` — length-K image of an input-space direction.
    pub fn apply(&self, eta: &[f64]) -> Vec<f64> {
        assert_eq!(eta.len(), self.d, "direction has wrong dimension");
        (0..self.k)
            .map(|i| self.row(i).iter().zip(eta).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Jᵀ v` — length-d pullback of an output-space vector.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.k, "coefficient vector has wrong dimension");
        let mut out = vec![0.0; self.d];
        for i in 0..self.k {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (o, j) in out.iter_mut().zip(self.row(i)) {
                *o += vi * j;
            }
        }
        out
    }
}

/// K reverse passes over one inference-mode graph: row i is `∇_x p_i`.
pub fn input_jacobian(net: &Network, x: &[f64]) -> InputJacobian {
    let (c, h, w) = net.arch().input_shape();
    let d = c * h * w;
    assert_eq!(x.len(), d, "input has wrong dimension");
    let xt = Tensor::from_vec(x.to_vec(), &[1, c, h, w]).tracked();
    let p = net.predict_proba(&xt);
    let k = net.num_classes();
    let mut rows = Vec::with_capacity(k * d);
    for i in 0..k {
        p.select_flat(i).backward();
        rows.extend_from_slice(&xt.grad().expect("tracked input must receive a gradient"));
    }
    InputJacobian { rows, k, d, probs: p.data().to_vec() }
}

/// The quadratic form `ηᵀ G_x η = (Jη)ᵀ G_s (Jη)`, evaluated through the
/// K×d Jacobian without ever assembling the d×d matrix.
pub fn input_fim_quadratic(net: &Network, x: &[f64], eta: &[f64]) -> f64 {
    let j = input_jacobian(net, x);
    quadratic_from_jacobian(&j, eta)
}

/// Same quadratic form from a precomputed Jacobian.
pub fn quadratic_from_jacobian(j: &InputJacobian, eta: &[f64]) -> f64 {
    let u = j.apply(eta);
    u.iter()
        .zip(&j.probs)
        .map(|(ui, &pi)| ui * ui / pi.max(CLAMP_MIN))
        .sum()
}

/// Top eigenpair of `G_x` plus the direction realizing it.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub lambda_max: f64,
    /// Unit-norm input direction; `e₀` when `degenerate` and the spectrum
    /// gave nothing to normalize.
    pub eta_unit: Vec<f64>,
    /// The K×K reduction `M = D^{1/2} J Jᵀ D^{1/2}`, row-major.
    pub reduced_matrix: Vec<f64>,
    /// Set when the Jacobian vanished or no sign of the direction increases
    /// the probe loss (flat or adversarially useless spectrum).
    pub degenerate: bool,
}

/// Most-damaging perturbation direction.
///
/// Builds the K×K reduction, extracts its top eigenpair by power iteration,
/// maps the eigenvector back through `Jᵀ D^{1/2}`, and orients the result so
/// `loss_fn` increases along it (probe step `1e-3·√d`). When neither sign
/// increases the loss the positive-probe orientation is kept and the result
/// is flagged degenerate rather than erroring.
pub fn ossa_direction<F: Fn(&[f64]) -> f64>(
    net: &Network,
    x: &[f64],
    loss_fn: F,
) -> Result<SpectralResult> {
    let j = input_jacobian(net, x);
    let k = j.k;
    let ds: Vec<f64> = j.probs.iter().map(|&p| 1.0 / p.max(CLAMP_MIN).sqrt()).collect();
    // M[a][b] = ds[a]·ds[b]·⟨row_a, row_b⟩ — K×K, symmetric PSD.
    let mut m = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let dot: f64 = j.row(a).iter().zip(j.row(b)).map(|(u, v)| u * v).sum();
            let val = ds[a] * ds[b] * dot;
            m[a * k + b] = val;
            m[b * k + a] = val;
        }
    }
    let degenerate_result = |m: Vec<f64>| {
        let mut e0 = vec![0.0; j.d];
        e0[0] = 1.0;
        SpectralResult { lambda_max: 0.0, eta_unit: e0, reduced_matrix: m, degenerate: true }
    };
    if m.iter().all(|&v| v == 0.0) {
        return Ok(degenerate_result(m));
    }
    let (lambda, v) = power_iteration(&m, k, 1e-10, 10_000)?;
    let dv: Vec<f64> = v.iter().zip(&ds).map(|(vi, di)| vi * di).collect();
    let mut eta = j.apply_transpose(&dv);
    let norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
    if lambda <= 0.0 || norm == 0.0 {
        return Ok(degenerate_result(m));
    }
    for e in eta.iter_mut() {
        *e /= norm;
    }
    // Orient along increasing loss.
    let delta = 1e-3 * (j.d as f64).sqrt();
    let base = loss_fn(x);
    let probe = |sign: f64| {
        let moved: Vec<f64> = x.iter().zip(&eta).map(|(xi, ei)| xi + sign * delta * ei).collect();
        loss_fn(&moved)
    };
    let plus = probe(1.0);
    let mut degenerate = false;
    if plus <= base {
        if probe(-1.0) > base {
            for e in eta.iter_mut() {
                *e = -*e;
            }
        } else {
            degenerate = true;
        }
    }
    Ok(SpectralResult { lambda_max: lambda, eta_unit: eta, reduced_matrix: m, degenerate })
}

/// `Σ p_i ln(p_i/q_i)` with the `0·ln 0 = 0` convention; q is clamped so a
/// zero in q yields a large finite value instead of ∞.
pub fn kl_divergence(p: &ProbabilityVector, q: &ProbabilityVector) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions differ in dimension");
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(CLAMP_MIN)).ln())
        .sum()
}

/// Top eigenpair of a symmetric PSD matrix by deterministic power iteration
/// (tolerance 1e-10, at most 10,000 iterations).
pub fn eig_topk_symmetric(m: &[f64], k: usize) -> Result<(f64, Vec<f64>)> {
    assert_eq!(m.len(), k * k, "matrix buffer does not match dimension");
    for a in 0..k {
        for b in a + 1..k {
            assert!(
                (m[a * k + b] - m[b * k + a]).abs() <= 1e-9,
                "matrix is not symmetric at ({a},{b})"
            );
        }
    }
    power_iteration(m, k, 1e-10, 10_000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_mlp, Network};
    use crate::tensor::Tensor;

    fn pv(p: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(p.to_vec()).unwrap()
    }

    /// Cross-entropy of `net` at `x` against a fixed label — the probe loss
    /// used by direction orientation.
    fn ce_probe(net: &Network, y: usize) -> impl Fn(&[f64]) -> f64 + '_ {
        move |x: &[f64]| -net.proba_one(x)[y].max(CLAMP_MIN).ln()
    }

    fn zeroed_mlp(input_dim: usize, k: usize) -> Network {
        let mut net = build_mlp(input_dim, &[], k, 1);
        for p in net.parameters_mut() {
            *p = Tensor::zeros(p.shape()).tracked();
        }
        net
    }

    #[test]
    fn probability_vector_validates() {
        assert!(ProbabilityVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbabilityVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
    }

    #[test]
    fn output_fim_of_uniform_is_k_times_identity() {
        let g = output_fim(&pv(&[0.25; 4]));
        assert_eq!(g.diagonal, vec![4.0; 4]);
    }

    #[test]
    fn output_fim_takes_reciprocals() {
        let g = output_fim(&pv(&[0.5, 0.25, 0.25]));
        assert_eq!(g.diagonal, vec![2.0, 4.0, 4.0]);
        assert!((g.trace() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fim_trace_uniform_is_k_squared() {
        assert!((fim_trace(&pv(&[0.1; 10])) - 100.0).abs() < 1e-9);
        assert!((fim_trace(&pv(&[0.5, 0.25, 0.25])) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fim_trace_dominates_k_squared_on_random_simplex_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..500 {
            let k = rng.gen_range(2..=8);
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let s: f64 = p.iter().sum();
            for v in p.iter_mut() {
                *v /= s;
            }
            let tr = fim_trace(&pv(&p));
            assert!(tr >= (k * k) as f64 - 1e-9, "trace {tr} below K²={}", k * k);
        }
    }

    #[test]
    fn constant_network_has_zero_jacobian() {
        let net = zeroed_mlp(6, 3);
        let j = input_jacobian(&net, &[0.2; 6]);
        assert!(j.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_columns_sum_to_zero() {
        let net = build_mlp(8, &[7], 4, 3);
        let x: Vec<f64> = (0..8).map(|i| 0.1 + 0.09 * i as f64).collect();
        let j = input_jacobian(&net, &x);
        for col in 0..j.d {
            let s: f64 = (0..j.k).map(|row| j.row(row)[col]).sum();
            assert!(s.abs() <= 1e-7, "column {col} sums to {s}");
        }
    }

    #[test]
    fn quadratic_form_basics() {
        let net = build_mlp(5, &[6], 3, 7);
        let x = [0.3, 0.1, 0.9, 0.4, 0.5];
        assert_eq!(input_fim_quadratic(&net, &x, &[0.0; 5]), 0.0);
        let eta = [0.2, -0.4, 0.1, 0.3, -0.2];
        let neg: Vec<f64> = eta.iter().map(|v| -v).collect();
        let a = input_fim_quadratic(&net, &x, &eta);
        let b = input_fim_quadratic(&net, &x, &neg);
        assert!(a >= 0.0);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn ossa_on_constant_network_is_degenerate() {
        let net = zeroed_mlp(6, 3);
        let r = ossa_direction(&net, &[0.4; 6], ce_probe(&net, 0)).unwrap();
        assert_eq!(r.lambda_max, 0.0);
        assert!(r.degenerate);
        let n: f64 = r.eta_unit.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12, "degenerate direction still unit norm");
    }

    #[test]
    fn ossa_is_self_consistent_with_quadratic_form() {
        let net = build_mlp(9, &[8], 4, 5);
        let x: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let r = ossa_direction(&net, &x, ce_probe(&net, 1)).unwrap();
        assert!(!r.degenerate);
        let n: f64 = r.eta_unit.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
        let q = input_fim_quadratic(&net, &x, &r.eta_unit);
        assert!(
            (q - r.lambda_max).abs() <= 1e-6 * r.lambda_max.abs().max(1e-300),
            "quadratic form {q} vs lambda {}",
            r.lambda_max
        );
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = pv(&[0.2, 0.5, 0.3]);
        assert_eq!(kl_divergence(&p, &p.clone()), 0.0);
    }

    #[test]
    fn kl_handles_zero_mass_analytically() {
        let p = pv(&[1.0, 0.0]);
        let q = pv(&[0.5, 0.5]);
        assert!((kl_divergence(&p, &q) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (l, _) = eig_topk_symmetric(&eye, 3).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
        let d = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let (l, v) = eig_topk_symmetric(&d, 3).unwrap();
        assert!((l - 5.0).abs() < 1e-9);
        assert!(v[2].abs() > 1.0 - 1e-8, "eigenvector should align with e3: {v:?}");
    }

    #[test]
    #[should_panic(expected = "not symmetric")]
    fn eig_rejects_asymmetric_input() {
        let m = [1.0, 2.0, 0.0, 1.0];
        let _ = eig_topk_symmetric(&m, 2);
    }
}
