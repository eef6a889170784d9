//! Multi-step attacks: BIM (l1/l2/l∞), PGD with a random start, DeepFool,
//! JSMA, and a simplified CW-l2.
//!
//! The ε-ball iterations all share one loop shape: take a step along the
//! per-norm ascent direction, project the accumulated perturbation back onto
//! the ε-ball, then clip into `[0,1]`. Projection before clipping keeps both
//! constraints satisfied at once, because clipping an in-box anchor point can
//! only shrink each coordinate's deviation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ce_input_gradient, clip01, finish, perturbation_norm, project_ball, sign, single,
    AttackBudget, AttackOutcome, NormKind,
};
use crate::models::{argmax, Network};
use crate::tensor::Tensor;

/// Basic Iterative Method. The ascent direction per step is `sign(g)` for
/// l∞, `g/‖g‖₂` for l2, and the single largest-|g| coordinate for l1
/// (steepest descent in the respective norm).
pub fn attack_bim(
    net: &Network,
    x: &[f64],
    y_true: usize,
    budget: &AttackBudget,
) -> AttackOutcome {
    assert!(
        matches!(budget.norm, NormKind::L1 | NormKind::L2 | NormKind::Linf),
        "BIM runs under l1, l2, or l-infinity budgets"
    );
    run_ball_iteration(net, x.to_vec(), x, y_true, budget, budget.steps)
}

/// PGD: BIM-l∞ from a uniform random start inside the ε-ball.
pub fn attack_pgd(
    net: &Network,
    x: &[f64],
    y_true: usize,
    budget: &AttackBudget,
    seed: u64,
) -> AttackOutcome {
    assert!(matches!(budget.norm, NormKind::Linf), "PGD spends an l-infinity budget");
    let mut start = x.to_vec();
    if budget.epsilon > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in start.iter_mut() {
            *v += rng.gen_range(-budget.epsilon..=budget.epsilon);
        }
        clip01(&mut start);
    }
    run_ball_iteration(net, start, x, y_true, budget, budget.steps)
}

/// Shared BIM/PGD loop: gradient step, ball projection, box clip.
fn run_ball_iteration(
    net: &Network,
    start: Vec<f64>,
    x: &[f64],
    y_true: usize,
    budget: &AttackBudget,
    steps: usize,
) -> AttackOutcome {
    let mut cur = start;
    let mut label_before = None;
    let mut queries = 0;
    for step in 0..steps {
        let g = ce_input_gradient(net, &cur, y_true);
        queries += 1;
        if step == 0 && cur == x {
            label_before = Some(argmax(&g.probs));
        }
        let gnorm = perturbation_norm(&g.grad, NormKind::L2);
        if gnorm == 0.0 {
            break; // flat loss surface: no direction to follow
        }
        match budget.norm {
            NormKind::Linf => {
                for (c, gi) in cur.iter_mut().zip(&g.grad) {
                    *c += budget.step_size * sign(*gi);
                }
            }
            NormKind::L2 => {
                let s = budget.step_size / gnorm;
                for (c, gi) in cur.iter_mut().zip(&g.grad) {
                    *c += s * gi;
                }
            }
            NormKind::L1 => {
                let mut idx = 0;
                for (i, gi) in g.grad.iter().enumerate() {
                    if gi.abs() > g.grad[idx].abs() {
                        idx = i;
                    }
                }
                cur[idx] += budget.step_size * sign(g.grad[idx]);
            }
            NormKind::L0 => unreachable!(),
        }
        let mut eta: Vec<f64> = cur.iter().zip(x).map(|(a, b)| a - b).collect();
        project_ball(&mut eta, budget.epsilon, budget.norm);
        for ((c, xi), e) in cur.iter_mut().zip(x).zip(&eta) {
            *c = xi + e;
        }
        clip01(&mut cur);
    }
    // PGD's random start shifts the first gradient query off x itself, so
    // the pre-attack label needs its own evaluation there.
    let (label_before, queries) = match label_before {
        Some(l) => (l, queries),
        None => (net.classify_one(x), queries + 1),
    };
    finish(net, x, cur, budget.norm, label_before, y_true, queries)
}

/// DeepFool: iterative multiclass linearization on the logits. At each step
/// the nearest linearized decision boundary is computed and crossed; the
/// total perturbation is overshot by 2% once the label actually flips. The
/// reported l2 norm is minimized, not budgeted.
pub fn attack_deepfool(
    net: &Network,
    x: &[f64],
    y_true: usize,
    max_steps: usize,
) -> AttackOutcome {
    let label_before = net.classify_one(x);
    let mut queries = 1;
    if label_before != y_true {
        // Already misclassified: nothing to do (and not a success).
        return finish(net, x, x.to_vec(), NormKind::L2, label_before, y_true, queries);
    }
    let k = net.num_classes();
    let d = net.input_dim();
    let mut cur = x.to_vec();
    let mut crossed = false;
    for _ in 0..max_steps {
        // Logit values and their input Jacobian at the current iterate.
        let xt = single(net, &cur).tracked();
        let z = net.logits(&xt);
        queries += 1;
        let zval = z.data().to_vec();
        let mut rows = Vec::with_capacity(k * d);
        for i in 0..k {
            z.select_flat(i).backward();
            rows.extend_from_slice(&xt.grad().expect("tracked input gets a gradient"));
        }
        if argmax(&zval) != label_before {
            crossed = true;
            break;
        }
        let base = &rows[label_before * d..(label_before + 1) * d];
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (ratio, w_k, f_k)
        for cls in 0..k {
            if cls == label_before {
                continue;
            }
            let w_k: Vec<f64> = rows[cls * d..(cls + 1) * d]
                .iter()
                .zip(base)
                .map(|(a, b)| a - b)
                .collect();
            let wnorm = perturbation_norm(&w_k, NormKind::L2);
            if wnorm == 0.0 {
                continue;
            }
            let f_k = zval[cls] - zval[label_before];
            let ratio = f_k.abs() / wnorm;
            if best.as_ref().map_or(true, |(r, _, _)| ratio < *r) {
                best = Some((ratio, w_k, f_k));
            }
        }
        let Some((_, w_k, f_k)) = best else {
            break; // all boundary gradients vanished
        };
        let wsq: f64 = w_k.iter().map(|v| v * v).sum();
        let scale = (f_k.abs() + 1e-4) / wsq;
        for (c, wi) in cur.iter_mut().zip(&w_k) {
            *c += scale * wi;
        }
    }
    let x_adv: Vec<f64> = if crossed {
        // Overshoot the accumulated perturbation so the iterate sits clear
        // of the boundary instead of on it.
        x.iter().zip(&cur).map(|(xi, ci)| xi + 1.02 * (ci - xi)).collect()
    } else {
        cur
    };
    finish(net, x, x_adv, NormKind::L2, label_before, y_true, queries)
}

/// JSMA: each round picks the one or two unsaturated pixels with the largest
/// positive pull on the target class probability and pushes them toward 1 by
/// `theta`. Stops at the target label, an exhausted pixel budget, or an
/// empty candidate set. The reported norm is the l0 count of changed pixels.
pub fn attack_jsma(
    net: &Network,
    x: &[f64],
    y_true: usize,
    y_target: usize,
    max_pixels: usize,
    theta: f64,
) -> AttackOutcome {
    assert!(theta > 0.0, "theta must be positive");
    assert_ne!(y_target, y_true, "target must differ from the true label");
    let label_before = net.classify_one(x);
    let mut queries = 1;
    let d = net.input_dim();
    let max_pixels = max_pixels.min(d);
    let mut cur = x.to_vec();
    let mut touched = vec![false; d];
    let mut touched_count = 0;
    // Hard stop: every round moves some pixel by θ (or saturates it), so
    // this bound is unreachable except under pathological tiny θ.
    let max_rounds = max_pixels * ((1.0 / theta).ceil() as usize).max(1) + 1;
    for _ in 0..max_rounds {
        queries += 1;
        if net.classify_one(&cur) == y_target {
            break;
        }
        // Target-class gradient row; the simplex constraint makes the
        // "other classes" row its exact negation, so the classic pair
        // criterion reduces to the top-2 positive target gradients.
        let j = crate::fim::input_jacobian(net, &cur);
        queries += 1;
        let pair = saliency_pair(j.row(y_target), &cur, &touched, touched_count, max_pixels);
        if pair.is_empty() {
            break;
        }
        for &i in &pair {
            if !touched[i] {
                touched[i] = true;
                touched_count += 1;
            }
            cur[i] = (cur[i] + theta).min(1.0);
        }
    }
    finish(net, x, cur, NormKind::L0, label_before, y_true, queries)
}

/// Candidate pixels for one JSMA round: among unsaturated pixels whose
/// target gradient is positive, the two largest (one if the pixel budget
/// only admits one more fresh pixel, none if eligibility or budget is gone).
fn saliency_pair(
    grad: &[f64],
    cur: &[f64],
    touched: &[bool],
    touched_count: usize,
    max_pixels: usize,
) -> Vec<usize> {
    let mut best: Option<usize> = None;
    let mut second: Option<usize> = None;
    for i in 0..grad.len() {
        if cur[i] >= 1.0 - 1e-12 || grad[i] <= 0.0 {
            continue;
        }
        match best {
            Some(b) if grad[i] <= grad[b] => match second {
                Some(s) if grad[i] <= grad[s] => {}
                _ => second = Some(i),
            },
            _ => {
                second = best;
                best = Some(i);
            }
        }
    }
    let budget_left = max_pixels - touched_count;
    let mut picked = Vec::new();
    let mut fresh_cost = 0;
    for cand in [best, second].into_iter().flatten() {
        let fresh = usize::from(!touched[cand]);
        if fresh_cost + fresh <= budget_left {
            fresh_cost += fresh;
            picked.push(cand);
        }
    }
    picked
}

/// Configuration for the simplified CW-l2 attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwConfig {
    /// Trade-off between distance and the classification hinge.
    pub c: f64,
    pub steps: usize,
    pub lr: f64,
    /// Confidence margin κ in the hinge.
    pub kappa: f64,
}

/// Simplified Carlini–Wagner l2: gradient descent in tanh space on
/// `‖x' − x‖₂² + c·max(Z_true − max_{k≠true} Z_k + κ, 0)`, returning the
/// smallest-norm successful iterate (flagged failure if none flips the
/// label). The tanh parameterization keeps `x'` inside `[0,1]` throughout.
pub fn attack_cw_l2(net: &Network, x: &[f64], y_true: usize, cfg: &CwConfig) -> AttackOutcome {
    assert!(cfg.c >= 0.0 && cfg.lr > 0.0 && cfg.steps >= 1, "bad CW configuration");
    let label_before = net.classify_one(x);
    let mut queries = 1;
    let (cch, h, wid) = net.arch().input_shape();
    let shape = [1, cch, h, wid];
    // atanh of the box-clamped input; the 1e-6 margin keeps it finite.
    let mut wdata: Vec<f64> = x
        .iter()
        .map(|&v| {
            let t = v.clamp(1e-6, 1.0 - 1e-6);
            (2.0 * t - 1.0).atanh()
        })
        .collect();
    let x0 = Tensor::from_vec(x.to_vec(), &shape);
    let half = Tensor::full(&shape, 0.5);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last = x.to_vec();
    for _ in 0..cfg.steps {
        let w = Tensor::from_vec(wdata.clone(), &shape).tracked();
        let xt = w.tanh().scale(0.5).add(&half);
        let z = net.logits(&xt);
        queries += 1;
        let zval = z.data().to_vec();
        last = xt.data().to_vec();
        // Track the best (smallest-l2) successful iterate so far.
        let label = argmax(&zval);
        if label != y_true {
            let eta_norm = xt
                .data()
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if best.as_ref().map_or(true, |(n, _)| eta_norm < *n) {
                best = Some((eta_norm, last.clone()));
            }
        }
        // Hinge target: the strongest competitor at this iterate, held
        // fixed for the step's gradient.
        let mut k_star = if y_true == 0 { 1 } else { 0 };
        for cls in 0..zval.len() {
            if cls != y_true && zval[cls] > zval[k_star] {
                k_star = cls;
            }
        }
        let diff = xt.add(&x0.neg());
        let dist = diff.mul(&diff).sum();
        let hinge_value = zval[y_true] - zval[k_star] + cfg.kappa;
        let objective = if cfg.c > 0.0 && hinge_value > 0.0 {
            let hinge = z
                .select_flat(y_true)
                .add(&z.select_flat(k_star).neg())
                .add(&Tensor::scalar(cfg.kappa));
            dist.add(&hinge.scale(cfg.c))
        } else {
            dist
        };
        objective.backward();
        let g = w.grad().expect("tracked tanh parameter gets a gradient");
        for (wv, gv) in wdata.iter_mut().zip(&g) {
            *wv -= cfg.lr * gv;
        }
    }
    let x_adv = best.map(|(_, xa)| xa).unwrap_or(last);
    finish(net, x, x_adv, NormKind::L2, label_before, y_true, queries)
}
