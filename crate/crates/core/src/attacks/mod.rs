//! Adversarial example generation against a frozen network.
//!
//! Every attack is a pure per-sample function `(net, x, label, budget[, seed])
//! → AttackOutcome`; the evaluation harness fans samples out across threads
//! and derives per-sample seeds itself. Attacks fall into two families:
//!
//! * **budgeted** — OSSA, FGSM, FGM, OTCM, BIM, PGD spend a fixed norm
//!   budget ε and report whether the label flipped;
//! * **minimizing** — DeepFool, JSMA, and the simplified CW-l2 search for a
//!   small perturbation and report the norm they found.
//!
//! All outcomes keep `x_adv` inside `[0,1]` (projection onto the ε-ball
//! happens before the box clip, so both constraints hold simultaneously),
//! and `success` is always re-derivable from the labels: the attack claims
//! success only when the sample was correctly classified before and is
//! misclassified after (OTCM, being targeted, instead requires hitting its
//! target class).

mod iterative;

pub use iterative::{attack_bim, attack_cw_l2, attack_deepfool, attack_jsma, attack_pgd, CwConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fim::ossa_direction;
use crate::models::{argmax, Network};
use crate::tensor::{Tensor, CLAMP_MIN};

/// Which norm a budget or a reported distance is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L0,
    L1,
    L2,
    Linf,
}

/// Perturbation budget for the ε-ball attacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget {
    pub norm: NormKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl AttackBudget {
    /// Single-step budget (FGSM/FGM/OTCM/OSSA): steps and step size unused.
    pub fn one_step(norm: NormKind, epsilon: f64) -> Self {
        assert!(epsilon >= 0.0, "negative budget");
        AttackBudget { norm, epsilon, steps: 1, step_size: epsilon }
    }

    pub fn iterative(norm: NormKind, epsilon: f64, steps: usize, step_size: f64) -> Self {
        assert!(epsilon >= 0.0, "negative budget");
        assert!(steps >= 1, "need at least one step");
        assert!(step_size > 0.0, "step size must be positive");
        AttackBudget { norm, epsilon, steps, step_size }
    }
}

/// What an attack produced. `queries` counts network forward evaluations,
/// including the final verification pass.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_adv: Vec<f64>,
    pub eta: Vec<f64>,
    pub achieved_norm: f64,
    pub success: bool,
    pub label_before: usize,
    pub label_after: usize,
    pub queries: usize,
}

/// `‖eta‖` in the given norm; l0 counts entries with `|v| > 1e-12`.
pub fn perturbation_norm(eta: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L0 => eta.iter().filter(|v| v.abs() > 1e-12).count() as f64,
        NormKind::L1 => eta.iter().map(|v| v.abs()).sum(),
        NormKind::L2 => eta.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Linf => eta.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

pub(crate) fn clip01(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Euclidean projection of `eta` onto the ε-ball of the given norm.
/// l0 has no continuous projection and is handled by JSMA directly.
pub(crate) fn project_ball(eta: &mut [f64], epsilon: f64, kind: NormKind) {
    match kind {
        NormKind::Linf => {
            for v in eta.iter_mut() {
                *v = v.clamp(-epsilon, epsilon);
            }
        }
        NormKind::L2 => {
            let n = perturbation_norm(eta, NormKind::L2);
            if n > epsilon {
                let s = if n == 0.0 { 0.0 } else { epsilon / n };
                for v in eta.iter_mut() {
                    *v *= s;
                }
            }
        }
        NormKind::L1 => project_l1(eta, epsilon),
        NormKind::L0 => unreachable!("no continuous projection onto an l0 ball"),
    }
}

/// Duchi et al. soft-thresholding projection onto the l1 ball.
fn project_l1(eta: &mut [f64], epsilon: f64) {
    if epsilon <= 0.0 {
        eta.fill(0.0);
        return;
    }
    let l1: f64 = eta.iter().map(|v| v.abs()).sum();
    if l1 <= epsilon {
        return;
    }
    let mut mags: Vec<f64> = eta.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - epsilon) / (i + 1) as f64;
        if m - t <= 0.0 {
            break;
        }
        theta = t;
    }
    for v in eta.iter_mut() {
        *v = v.signum() * (v.abs() - theta).max(0.0);
    }
}

pub(crate) fn single(net: &Network, x: &[f64]) -> Tensor {
    let (c, h, w) = net.arch().input_shape();
    assert_eq!(x.len(), c * h * w, "input has wrong dimension");
    Tensor::from_vec(x.to_vec(), &[1, c, h, w])
}

/// Input gradient of the cross-entropy against class `y`, plus the output
/// probabilities at `x` (one forward, one reverse pass).
pub struct CeGradient {
    pub grad: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn ce_input_gradient(net: &Network, x: &[f64], y: usize) -> CeGradient {
    let xt = single(net, x).tracked();
    let p = net.predict_proba(&xt);
    p.select_flat(y).ln().neg().backward();
    CeGradient { grad: xt.grad().expect("tracked input gets a gradient"), probs: p.data().to_vec() }
}

/// Cross-entropy value at `x` for the orientation probes.
pub(crate) fn ce_value(net: &Network, x: &[f64], y: usize) -> f64 {
    -net.proba_one(x)[y].max(CLAMP_MIN).ln()
}

/// Assemble the outcome: recompute η, its norm, the post-attack label, and
/// the success flag from labels (never trusted from the attack body).
pub(crate) fn finish(
    net: &Network,
    x: &[f64],
    mut x_adv: Vec<f64>,
    norm_kind: NormKind,
    label_before: usize,
    y_true: usize,
    queries: usize,
) -> AttackOutcome {
    clip01(&mut x_adv);
    let eta: Vec<f64> = x_adv.iter().zip(x).map(|(a, b)| a - b).collect();
    let achieved_norm = perturbation_norm(&eta, norm_kind);
    let label_after = net.classify_one(&x_adv);
    let success = label_before == y_true && label_after != y_true;
    AttackOutcome { x_adv, eta, achieved_norm, success, label_before, label_after, queries: queries + 1 }
}

/// OSSA: step of l2 length ε along the top eigenvector of the input-space
/// Fisher matrix, oriented uphill in the cross-entropy.
pub fn attack_ossa(
    net: &Network,
    x: &[f64],
    y_true: usize,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    assert!(matches!(budget.norm, NormKind::L2), "OSSA spends an l2 budget");
    let spectral = ossa_direction(net, x, |z| ce_value(net, z, y_true))?;
    let label_before = net.classify_one(x);
    // Jacobian graph + two probes + label check.
    let queries = 4;
    if spectral.degenerate || budget.epsilon == 0.0 {
        let mut out = finish(net, x, x.to_vec(), NormKind::L2, label_before, y_true, queries);
        out.success = false;
        return Ok(out);
    }
    let x_adv: Vec<f64> = x
        .iter()
        .zip(&spectral.eta_unit)
        .map(|(xi, ei)| xi + budget.epsilon * ei)
        .collect();
    Ok(finish(net, x, x_adv, NormKind::L2, label_before, y_true, queries))
}

/// FGSM: one signed-gradient step of l∞ size ε.
pub fn attack_fgsm(net: &Network, x: &[f64], y_true: usize, budget: &AttackBudget) -> AttackOutcome {
    assert!(matches!(budget.norm, NormKind::Linf), "FGSM spends an l-infinity budget");
    let g = ce_input_gradient(net, x, y_true);
    let label_before = argmax(&g.probs);
    let x_adv: Vec<f64> = x
        .iter()
        .zip(&g.grad)
        .map(|(xi, gi)| xi + budget.epsilon * sign(*gi))
        .collect();
    finish(net, x, x_adv, NormKind::Linf, label_before, y_true, 1)
}

/// FGM: one l2-normalized gradient step of length ε. A vanishing gradient
/// makes the direction undefined; the attack degrades to a flagged no-op.
pub fn attack_fgm(net: &Network, x: &[f64], y_true: usize, budget: &AttackBudget) -> AttackOutcome {
    assert!(matches!(budget.norm, NormKind::L2), "FGM spends an l2 budget");
    let g = ce_input_gradient(net, x, y_true);
    let label_before = argmax(&g.probs);
    let n = perturbation_norm(&g.grad, NormKind::L2);
    if n == 0.0 {
        let mut out = finish(net, x, x.to_vec(), NormKind::L2, label_before, y_true, 1);
        out.success = false;
        return out;
    }
    let s = budget.epsilon / n;
    let x_adv: Vec<f64> = x.iter().zip(&g.grad).map(|(xi, gi)| xi + s * gi).collect();
    finish(net, x, x_adv, NormKind::L2, label_before, y_true, 1)
}

/// OTCM: one step **down** the cross-entropy of a chosen target class.
/// Success means reaching the target, not merely leaving the true class.
pub fn attack_otcm(
    net: &Network,
    x: &[f64],
    y_target: usize,
    budget: &AttackBudget,
) -> AttackOutcome {
    let g = ce_input_gradient(net, x, y_target);
    let label_before = argmax(&g.probs);
    let x_adv: Vec<f64> = match budget.norm {
        NormKind::Linf => x
            .iter()
            .zip(&g.grad)
            .map(|(xi, gi)| xi - budget.epsilon * sign(*gi))
            .collect(),
        NormKind::L2 => {
            let n = perturbation_norm(&g.grad, NormKind::L2);
            if n == 0.0 {
                x.to_vec()
            } else {
                let s = budget.epsilon / n;
                x.iter().zip(&g.grad).map(|(xi, gi)| xi - s * gi).collect()
            }
        }
        other => panic!("OTCM supports linf or l2 budgets, not {other:?}"),
    };
    // `finish` computes the untargeted flag; override with the targeted one.
    let mut out = finish(net, x, x_adv, budget.norm, label_before, y_target, 1);
    out.success = out.label_after == y_target;
    out
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Least-probable class other than `exclude` — the default OTCM/JSMA target.
pub fn least_likely_target(net: &Network, x: &[f64], exclude: usize) -> usize {
    let p = net.proba_one(x);
    let mut best = usize::MAX;
    let mut best_p = f64::INFINITY;
    for (i, &pi) in p.iter().enumerate() {
        if i != exclude && pi < best_p {
            best = i;
            best_p = pi;
        }
    }
    best
}

fn default_steps() -> usize {
    10
}

fn default_deepfool_steps() -> usize {
    50
}

fn default_theta() -> f64 {
    1.0
}

fn default_max_pixels() -> usize {
    112
}

fn default_cw_c() -> f64 {
    1.0
}

fn default_cw_steps() -> usize {
    200
}

fn default_cw_lr() -> f64 {
    0.01
}

/// Config-file description of one attack; `run` dispatches to the
/// implementations above with spec'd defaults filled in.
///
/// Iterative ε-ball attacks may omit `step_size`; it then defaults to
/// `2.5·ε/steps`, large enough to reach the ball boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    Ossa { epsilon: f64 },
    Fgsm { epsilon: f64 },
    Fgm { epsilon: f64 },
    Otcm {
        epsilon: f64,
        #[serde(default = "linf")]
        norm: NormKind,
    },
    BimL1 {
        epsilon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    BimL2 {
        epsilon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    BimLinf {
        epsilon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    Pgd {
        epsilon: f64,
        #[serde(default = "default_steps")]
        steps: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_size: Option<f64>,
    },
    Deepfool {
        #[serde(default = "default_deepfool_steps")]
        max_steps: usize,
    },
    Jsma {
        #[serde(default = "default_max_pixels")]
        max_pixels: usize,
        #[serde(default = "default_theta")]
        theta: f64,
    },
    CwL2 {
        #[serde(default = "default_cw_c")]
        c: f64,
        #[serde(default = "default_cw_steps")]
        steps: usize,
        #[serde(default = "default_cw_lr")]
        lr: f64,
        #[serde(default)]
        kappa: f64,
    },
}

fn linf() -> NormKind {
    NormKind::Linf
}

fn auto_step(epsilon: f64, steps: usize, step_size: Option<f64>) -> f64 {
    step_size.unwrap_or_else(|| {
        if epsilon == 0.0 {
            1.0 // never taken: projection pins η to zero
        } else {
            2.5 * epsilon / steps as f64
        }
    })
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Ossa { .. } => "ossa",
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::Fgm { .. } => "fgm",
            AttackSpec::Otcm { .. } => "otcm",
            AttackSpec::BimL1 { .. } => "bim_l1",
            AttackSpec::BimL2 { .. } => "bim_l2",
            AttackSpec::BimLinf { .. } => "bim_linf",
            AttackSpec::Pgd { .. } => "pgd",
            AttackSpec::Deepfool { .. } => "deepfool",
            AttackSpec::Jsma { .. } => "jsma",
            AttackSpec::CwL2 { .. } => "cw_l2",
        }
    }

    /// Norm the attack's reported distance is measured in.
    pub fn norm_kind(&self) -> NormKind {
        match self {
            AttackSpec::Ossa { .. }
            | AttackSpec::Fgm { .. }
            | AttackSpec::BimL2 { .. }
            | AttackSpec::Deepfool { .. }
            | AttackSpec::CwL2 { .. } => NormKind::L2,
            AttackSpec::Fgsm { .. } | AttackSpec::BimLinf { .. } | AttackSpec::Pgd { .. } => {
                NormKind::Linf
            }
            AttackSpec::Otcm { norm, .. } => *norm,
            AttackSpec::BimL1 { .. } => NormKind::L1,
            AttackSpec::Jsma { .. } => NormKind::L0,
        }
    }

    /// Budgeted attacks admit an ε sweep; minimizing attacks return `None`.
    pub fn with_epsilon(&self, epsilon: f64) -> Option<AttackSpec> {
        let mut copy = self.clone();
        match &mut copy {
            AttackSpec::Ossa { epsilon: e }
            | AttackSpec::Fgsm { epsilon: e }
            | AttackSpec::Fgm { epsilon: e }
            | AttackSpec::Otcm { epsilon: e, .. }
            | AttackSpec::BimL1 { epsilon: e, .. }
            | AttackSpec::BimL2 { epsilon: e, .. }
            | AttackSpec::BimLinf { epsilon: e, .. }
            | AttackSpec::Pgd { epsilon: e, .. } => *e = epsilon,
            AttackSpec::Deepfool { .. } | AttackSpec::Jsma { .. } | AttackSpec::CwL2 { .. } => {
                return None
            }
        }
        Some(copy)
    }

    pub fn is_budgeted(&self) -> bool {
        !matches!(
            self,
            AttackSpec::Deepfool { .. } | AttackSpec::Jsma { .. } | AttackSpec::CwL2 { .. }
        )
    }

    /// The configured budget, when there is one.
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            AttackSpec::Ossa { epsilon }
            | AttackSpec::Fgsm { epsilon }
            | AttackSpec::Fgm { epsilon }
            | AttackSpec::Otcm { epsilon, .. }
            | AttackSpec::BimL1 { epsilon, .. }
            | AttackSpec::BimL2 { epsilon, .. }
            | AttackSpec::BimLinf { epsilon, .. }
            | AttackSpec::Pgd { epsilon, .. } => Some(*epsilon),
            AttackSpec::Deepfool { .. } | AttackSpec::Jsma { .. } | AttackSpec::CwL2 { .. } => {
                None
            }
        }
    }

    /// Run against one sample. `seed` only matters for randomized attacks
    /// (PGD); the harness passes `run_seed ⊕ sample_index`.
    pub fn run(&self, net: &Network, x: &[f64], y_true: usize, seed: u64) -> Result<AttackOutcome> {
        Ok(match *self {
            AttackSpec::Ossa { epsilon } => {
                attack_ossa(net, x, y_true, &AttackBudget::one_step(NormKind::L2, epsilon))?
            }
            AttackSpec::Fgsm { epsilon } => {
                attack_fgsm(net, x, y_true, &AttackBudget::one_step(NormKind::Linf, epsilon))
            }
            AttackSpec::Fgm { epsilon } => {
                attack_fgm(net, x, y_true, &AttackBudget::one_step(NormKind::L2, epsilon))
            }
            AttackSpec::Otcm { epsilon, norm } => {
                let target = least_likely_target(net, x, y_true);
                attack_otcm(net, x, target, &AttackBudget::one_step(norm, epsilon))
            }
            AttackSpec::BimL1 { epsilon, steps, step_size } => attack_bim(
                net,
                x,
                y_true,
                &AttackBudget::iterative(NormKind::L1, epsilon, steps, auto_step(epsilon, steps, step_size)),
            ),
            AttackSpec::BimL2 { epsilon, steps, step_size } => attack_bim(
                net,
                x,
                y_true,
                &AttackBudget::iterative(NormKind::L2, epsilon, steps, auto_step(epsilon, steps, step_size)),
            ),
            AttackSpec::BimLinf { epsilon, steps, step_size } => attack_bim(
                net,
                x,
                y_true,
                &AttackBudget::iterative(NormKind::Linf, epsilon, steps, auto_step(epsilon, steps, step_size)),
            ),
            AttackSpec::Pgd { epsilon, steps, step_size } => attack_pgd(
                net,
                x,
                y_true,
                &AttackBudget::iterative(NormKind::Linf, epsilon, steps, auto_step(epsilon, steps, step_size)),
                seed,
            ),
            AttackSpec::Deepfool { max_steps } => attack_deepfool(net, x, y_true, max_steps),
            AttackSpec::Jsma { max_pixels, theta } => {
                let target = least_likely_target(net, x, y_true);
                attack_jsma(net, x, y_true, target, max_pixels, theta)
            }
            AttackSpec::CwL2 { c, steps, lr, kappa } => {
                attack_cw_l2(net, x, y_true, &CwConfig { c, steps, lr, kappa })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_mlp;
    use crate::tensor::fd::finite_difference_gradient;

    /// 2-class logistic model in 2-D with hand-set weights: columns of `w`
    /// are the per-class weight vectors, biases zero.
    fn logistic_2d(w: [[f64; 2]; 2]) -> Network {
        let mut net = build_mlp(2, &[], 2, 0);
        let snapshot_w = vec![w[0][0], w[0][1], w[1][0], w[1][1]]; // row-major (2,2)
        let mut params = net.parameters_mut();
        *params[0] = Tensor::from_vec(snapshot_w, &[2, 2]).tracked();
        *params[1] = Tensor::zeros(&[2]).tracked();
        net
    }

    fn zeroed_mlp(input_dim: usize, k: usize) -> Network {
        let mut net = build_mlp(input_dim, &[], k, 1);
        for p in net.parameters_mut() {
            *p = Tensor::zeros(p.shape()).tracked();
        }
        net
    }

    #[test]
    fn fgsm_zero_gradient_is_identity() {
        let net = zeroed_mlp(4, 3);
        let x = [0.2, 0.8, 0.5, 0.1];
        let out = attack_fgsm(&net, &x, 0, &AttackBudget::one_step(NormKind::Linf, 0.25));
        assert_eq!(out.x_adv, x.to_vec());
        assert_eq!(out.achieved_norm, 0.0);
    }

    #[test]
    fn fgsm_respects_linf_budget_and_box() {
        let net = build_mlp(6, &[5], 3, 9);
        let x = [0.05, 0.95, 0.5, 0.3, 0.7, 0.01];
        let out = attack_fgsm(&net, &x, 1, &AttackBudget::one_step(NormKind::Linf, 0.3));
        assert!(out.achieved_norm <= 0.3 + 1e-6);
        assert!(out.x_adv.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fgsm_matches_analytic_logistic_gradient_sign() {
        // w columns e1, e2: ∇_x CE(y=0) = (p0−1)·e1 + p1·e2, so sign is
        // (−1, +1) anywhere and η = ε·(−1, +1).
        let net = logistic_2d([[1.0, 0.0], [0.0, 1.0]]);
        let x = [0.5, 0.5];
        let eps = 0.125;
        let out = attack_fgsm(&net, &x, 0, &AttackBudget::one_step(NormKind::Linf, eps));
        assert!((out.eta[0] + eps).abs() < 1e-12);
        assert!((out.eta[1] - eps).abs() < 1e-12);
    }

    #[test]
    fn fgm_zero_gradient_flags_no_op() {
        let net = zeroed_mlp(4, 3);
        let x = [0.2, 0.8, 0.5, 0.1];
        let out = attack_fgm(&net, &x, 0, &AttackBudget::one_step(NormKind::L2, 0.5));
        assert_eq!(out.x_adv, x.to_vec());
        assert!(!out.success);
    }

    #[test]
    fn fgm_preclip_norm_equals_epsilon() {
        let net = build_mlp(4, &[6], 3, 2);
        let x = [0.5, 0.5, 0.5, 0.5]; // interior point, small ε → no clipping
        let out = attack_fgm(&net, &x, 0, &AttackBudget::one_step(NormKind::L2, 0.01));
        assert!((out.achieved_norm - 0.01).abs() < 1e-9);
    }

    #[test]
    fn fgm_direction_matches_fd_gradient() {
        let net = build_mlp(5, &[7], 3, 4);
        let x = [0.3, 0.6, 0.2, 0.8, 0.4];
        let y = 2;
        let g = ce_input_gradient(&net, &x, y);
        let fd = finite_difference_gradient(
            |t| -net.proba_one(t.data())[y].ln(),
            &x,
            &[1, 1, 1, 5],
            1e-5,
        );
        let dot: f64 = g.grad.iter().zip(&fd).map(|(a, b)| a * b).sum();
        let na = perturbation_norm(&g.grad, NormKind::L2);
        let nb = perturbation_norm(&fd, NormKind::L2);
        assert!(dot / (na * nb) >= 1.0 - 1e-4, "cosine {}", dot / (na * nb));
    }

    #[test]
    fn otcm_descends_target_cross_entropy() {
        let net = build_mlp(6, &[8], 4, 11);
        let x = [0.4, 0.1, 0.7, 0.3, 0.9, 0.5];
        let y_true = net.classify_one(&x);
        let target = least_likely_target(&net, &x, y_true);
        let before = ce_value(&net, &x, target);
        let out = attack_otcm(&net, &x, target, &AttackBudget::one_step(NormKind::L2, 1e-3));
        let after = ce_value(&net, &out.x_adv, target);
        assert!(after < before, "CE(target) should fall: {before} -> {after}");
        assert!((out.achieved_norm - 1e-3).abs() < 1e-9);
        assert_eq!(out.success, out.label_after == target);
    }

    #[test]
    fn ossa_on_constant_network_is_flagged_no_op() {
        let net = zeroed_mlp(4, 3);
        let x = [0.3, 0.3, 0.3, 0.3];
        let out = attack_ossa(&net, &x, 0, &AttackBudget::one_step(NormKind::L2, 2.0)).unwrap();
        assert_eq!(out.x_adv, x.to_vec());
        assert!(!out.success);
        assert_eq!(out.achieved_norm, 0.0);
    }

    #[test]
    fn ossa_spends_exactly_its_l2_budget_in_the_interior() {
        let net = build_mlp(6, &[6], 3, 7);
        let x = [0.5; 6];
        let eps = 0.01;
        let out = attack_ossa(&net, &x, 0, &AttackBudget::one_step(NormKind::L2, eps)).unwrap();
        assert!((out.achieved_norm - eps).abs() < 1e-9);
    }

    #[test]
    fn ossa_on_logistic_model_moves_along_the_weight_axis() {
        // For K=2 the Jacobian is rank one along w = w₀ − w₁, so the OSSA
        // direction must be ±w/‖w‖ regardless of the spectrum machinery.
        let net = logistic_2d([[0.6, 0.0], [0.8, 0.0]]);
        let x = [0.5, 0.5];
        let out = attack_ossa(&net, &x, 0, &AttackBudget::one_step(NormKind::L2, 1e-3)).unwrap();
        let eta = &out.eta;
        let n = perturbation_norm(eta, NormKind::L2);
        // Weight matrix is (input 2 × class 2) row-major [0.6,0.0 / 0.8,0.0]:
        // class-0 column (0.6, 0.8), class-1 column zero → w = (0.6, 0.8).
        let cos = (eta[0] * 0.6 + eta[1] * 0.8) / (n * 1.0);
        assert!(cos.abs() >= 1.0 - 1e-6, "direction off the weight axis: cos {cos}");
    }

    #[test]
    fn l1_projection_lands_on_the_ball() {
        let mut v = vec![0.5, -1.5, 0.25, 0.0, 2.0];
        project_ball(&mut v, 1.0, NormKind::L1);
        let l1: f64 = v.iter().map(|u| u.abs()).sum();
        assert!((l1 - 1.0).abs() < 1e-9, "l1 after projection: {l1}");
        assert!(v[1] <= 0.0 && v[4] >= 0.0, "projection must not flip signs");
        let mut inside = vec![0.1, -0.2];
        project_ball(&mut inside, 1.0, NormKind::L1);
        assert_eq!(inside, vec![0.1, -0.2]);
    }

    #[test]
    fn attack_spec_serde_round_trip() {
        let specs = vec![
            AttackSpec::Ossa { epsilon: 2.0 },
            AttackSpec::Fgsm { epsilon: 0.1 },
            AttackSpec::Otcm { epsilon: 0.1, norm: NormKind::L2 },
            AttackSpec::Pgd { epsilon: 0.1, steps: 10, step_size: Some(0.02) },
            AttackSpec::Deepfool { max_steps: 50 },
            AttackSpec::Jsma { max_pixels: 30, theta: 1.0 },
            AttackSpec::CwL2 { c: 1.0, steps: 200, lr: 0.01, kappa: 0.0 },
        ];
        for spec in specs {
            let j = serde_json::to_string(&spec).unwrap();
            let back: AttackSpec = serde_json::from_str(&j).unwrap();
            assert_eq!(spec, back, "round trip through {j}");
        }
        let parsed: AttackSpec = serde_json::from_str(r#"{"name":"pgd","epsilon":0.3}"#).unwrap();
        assert_eq!(parsed, AttackSpec::Pgd { epsilon: 0.3, steps: 10, step_size: None });
    }

    #[test]
    fn with_epsilon_only_touches_budgeted_attacks() {
        assert_eq!(
            AttackSpec::Fgsm { epsilon: 0.1 }.with_epsilon(0.5),
            Some(AttackSpec::Fgsm { epsilon: 0.5 })
        );
        assert_eq!(AttackSpec::Deepfool { max_steps: 50 }.with_epsilon(0.5), None);
        assert!(AttackSpec::Fgsm { epsilon: 0.1 }.is_budgeted());
        assert!(!AttackSpec::CwL2 { c: 1.0, steps: 1, lr: 0.1, kappa: 0.0 }.is_budgeted());
    }
}
