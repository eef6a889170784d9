//! Training loops for three regimes: plain cross-entropy, the trace-penalized
//! loss `mean[CE + μ·Σ 1/clamp(p_i)]`, and label-smoothing regularization.
//!
//! Optimization is SGD with momentum over seeded shuffles, so a `(data,
//! config)` pair pins the entire parameter trajectory bit-for-bit. The
//! penalty term rides the same graph as the cross-entropy; nothing here is
//! attack-aware. Every epoch logs the loss decomposition (total = CE + reg
//! within 1e-6), test accuracy, and the mean max-probability on the training
//! set — the quantity the trace penalty visibly pushes down.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{batches, BatchPlan, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{argmax, Network};
use crate::tensor::Tensor;

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    /// Plain cross-entropy.
    Baseline,
    /// Cross-entropy plus μ times the output-Fisher trace, batch-averaged.
    Fim { mu: f64 },
    /// Cross-entropy against smoothed labels `y(1−α) + α/K`.
    Lsr { alpha: f64 },
}

fn default_epochs() -> usize {
    3
}

fn default_batch_size() -> usize {
    64
}

fn default_lr() -> f64 {
    0.05
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.regime {
            Regime::Fim { mu } if mu < 0.0 || !mu.is_finite() => {
                return bad(format!("mu must be a nonnegative real, got {mu}"));
            }
            Regime::Lsr { alpha } if !(0.0..1.0).contains(&alpha) || alpha == 0.0 => {
                return bad(format!("alpha must lie in (0,1), got {alpha}"));
            }
            _ => {}
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        Ok(())
    }
}

/// One epoch's logged metrics. `reg` already includes the μ factor, so
/// `loss = ce + reg` within float noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub reg: f64,
    pub test_acc: f64,
    pub mean_maxp: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// CSV with columns `epoch,loss,ce,reg,test_acc,mean_maxp`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.epochs {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| Error::Numeric(format!("flushing train log: {e}")))?;
        Ok(())
    }
}

/// The training objective on one batch of output probabilities: batch-mean
/// of `CE(y, p) + μ·Σ_i 1/clamp(p_i)`. μ = 0 builds exactly the plain-CE
/// graph — no penalty node at all.
pub fn regularized_loss(p: &Tensor, y: &[usize], mu: f64) -> Tensor {
    let (ce, reg) = loss_parts(p, y, mu);
    match reg {
        Some(r) => ce.add(&r.scale(mu)),
        None => ce,
    }
}

/// CE mean and (if μ > 0) the unweighted per-sample trace mean, as graph
/// nodes, so the trainer can log the decomposition it actually optimized.
fn loss_parts(p: &Tensor, y: &[usize], mu: f64) -> (Tensor, Option<Tensor>) {
    let b = y.len() as f64;
    let ce = p.gather_class(y).ln().neg().mean();
    let reg = (mu > 0.0).then(|| p.recip().sum().scale(1.0 / b));
    (ce, reg)
}

/// Soft label vector for label-smoothing: `y_k(1−α) + α/K`.
pub fn lsr_labels(y: usize, k: usize, alpha: f64) -> Vec<f64> {
    assert!(y < k, "label out of range");
    let mut soft = vec![alpha / k as f64; k];
    soft[y] += 1.0 - alpha;
    soft
}

/// Soft cross-entropy `−mean_b Σ_k q_bk ln p_bk` against smoothed labels.
fn lsr_loss(p: &Tensor, y: &[usize], k: usize, alpha: f64) -> Tensor {
    let mut q = Vec::with_capacity(y.len() * k);
    for &yi in y {
        q.extend_from_slice(&lsr_labels(yi, k, alpha));
    }
    let qt = Tensor::from_vec(q, &[y.len(), k]);
    p.ln().mul(&qt).sum().neg().scale(1.0 / y.len() as f64)
}

/// SGD with momentum over seeded shuffles; the learning rate steps down
/// ×0.1 after two thirds of the epochs. Returns the trained network with BN
/// running statistics frozen, and the per-epoch log.
pub fn train(
    mut net: Network,
    train_data: &LabeledDataset,
    test_data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut velocities: Vec<Vec<f64>> =
        net.parameters().iter().map(|p| vec![0.0; p.numel()]).collect();
    let decay_at = cfg.epochs * 2 / 3;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = if cfg.epochs > 1 && epoch >= decay_at { cfg.lr * 0.1 } else { cfg.lr };
        let plan = BatchPlan { batch_size: cfg.batch_size, seed: cfg.seed, epoch: epoch as u64 };
        let mut sums = (0.0, 0.0, 0.0); // weighted (loss, ce, reg)
        for (bi, (x, y)) in batches(train_data, &plan).enumerate() {
            let p = net.forward_train(&x);
            if p.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, batch {bi}: non-finite probabilities"
                )));
            }
            let (loss, ce_val, reg_val) = match cfg.regime {
                Regime::Baseline => {
                    let (ce, _) = loss_parts(&p, &y, 0.0);
                    let v = ce.item();
                    (ce, v, 0.0)
                }
                Regime::Fim { mu } => {
                    let (ce, reg) = loss_parts(&p, &y, mu);
                    let ce_val = ce.item();
                    match reg {
                        Some(r) => {
                            let reg_val = mu * r.item();
                            (ce.add(&r.scale(mu)), ce_val, reg_val)
                        }
                        None => (ce, ce_val, 0.0),
                    }
                }
                Regime::Lsr { alpha } => {
                    let l = lsr_loss(&p, &y, train_data.num_classes(), alpha);
                    let v = l.item();
                    (l, v, 0.0)
                }
            };
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}, batch {bi}: loss {loss_val}"
                )));
            }
            let bs = y.len() as f64;
            sums.0 += loss_val * bs;
            sums.1 += ce_val * bs;
            sums.2 += reg_val * bs;
            loss.backward();
            for (param, vel) in net.parameters_mut().into_iter().zip(&mut velocities) {
                let g = param.grad().expect("every parameter is in the loss graph");
                let data = param.data();
                let mut next = Vec::with_capacity(data.len());
                for ((d, v), gi) in data.iter().zip(vel.iter_mut()).zip(&g) {
                    *v = cfg.momentum * *v - lr * gi;
                    next.push(d + *v);
                }
                *param = Tensor::from_vec(next, param.shape()).tracked();
            }
        }
        let n = train_data.len() as f64;
        log.epochs.push(EpochStats {
            epoch,
            loss: sums.0 / n,
            ce: sums.1 / n,
            reg: sums.2 / n,
            test_acc: evaluate_accuracy(&net, test_data),
            mean_maxp: mean_max_probability(&net, train_data),
        });
    }
    Ok((net, log))
}

const EVAL_BATCH: usize = 512;

/// Fraction of argmax-correct predictions, inference mode.
pub fn evaluate_accuracy(net: &Network, data: &LabeledDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let k = data.num_classes();
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let (x, y) = data.batch(&idx);
        let p = net.predict_proba(&x);
        for (row, yi) in p.data().chunks_exact(k).zip(&y) {
            if argmax(row) == *yi {
                correct += 1;
            }
        }
    }
    correct as f64 / data.len() as f64
}

/// Mean over the dataset of the per-sample maximum output probability — the
/// confidence measure the trace penalty suppresses.
pub fn mean_max_probability(net: &Network, data: &LabeledDataset) -> f64 {
    assert!(!data.is_empty(), "mean max-probability over an empty set");
    let k = data.num_classes();
    let mut total = 0.0;
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(data.len())).collect();
        let (x, _) = data.batch(&idx);
        let p = net.predict_proba(&x);
        for row in p.data().chunks_exact(k) {
            total += row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    total / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synthetic_blobs;
    use crate::models::{build_mlp, NetworkSnapshot};

    #[test]
    fn lsr_labels_match_the_formula() {
        let soft = lsr_labels(3, 10, 0.1);
        for (i, v) in soft.iter().enumerate() {
            let want = if i == 3 { 0.91 } else { 0.01 };
            assert!((v - want).abs() < 1e-12, "index {i}: {v}");
        }
        let tiny = lsr_labels(0, 4, 1e-9);
        assert!((tiny[0] - 1.0).abs() < 1e-8, "alpha→0 approaches one-hot");
        for alpha in [0.05, 0.3, 0.77] {
            let s: f64 = lsr_labels(2, 7, alpha).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn regularized_loss_with_zero_mu_is_plain_ce() {
        let p = Tensor::from_vec(vec![0.7, 0.2, 0.1, 0.1, 0.6, 0.3], &[2, 3]);
        let y = [0, 1];
        let loss = regularized_loss(&p, &y, 0.0);
        let want = -(0.7f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((loss.item() - want).abs() < 1e-12);
    }

    #[test]
    fn regularizer_component_at_uniform_is_mu_k_squared() {
        let p = Tensor::from_vec(vec![0.1; 20], &[2, 10]);
        let y = [4, 9];
        let mu = 0.022;
        let with = regularized_loss(&p, &y, mu).item();
        let without = regularized_loss(&p, &y, 0.0).item();
        assert!((with - without - mu * 100.0).abs() < 1e-9);
    }

    #[test]
    fn eq4_value_matches_hand_computation() {
        let p = Tensor::from_vec(vec![0.9, 0.1], &[1, 2]);
        let loss = regularized_loss(&p, &[0], 0.02).item();
        let want = -(0.9f64.ln()) + 0.02 * (1.0 / 0.9 + 1.0 / 0.1);
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    fn tiny_setup(seed: u64) -> (LabeledDataset, LabeledDataset, Network) {
        let train = synthetic_blobs(3, 40, 8, seed).unwrap();
        let test = synthetic_blobs(3, 10, 8, seed + 1).unwrap();
        let net = build_mlp(8, &[12], 3, seed);
        (train, test, net)
    }

    fn weights_of(net: &Network) -> String {
        NetworkSnapshot::weights_hash(&net.snapshot())
    }

    #[test]
    fn fim_with_zero_mu_matches_baseline_bit_for_bit() {
        let (train_d, test_d, net) = tiny_setup(5);
        let cfg_a = TrainConfig {
            regime: Regime::Baseline,
            epochs: 2,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 3,
        };
        let cfg_b = TrainConfig { regime: Regime::Fim { mu: 0.0 }, ..cfg_a.clone() };
        let (net_a, log_a) = train(net, &train_d, &test_d, &cfg_a).unwrap();
        let net2 = build_mlp(8, &[12], 3, 5);
        let (net_b, log_b) = train(net2, &train_d, &test_d, &cfg_b).unwrap();
        assert_eq!(weights_of(&net_a), weights_of(&net_b));
        assert_eq!(log_a.epochs, log_b.epochs);
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let (train_d, test_d, _) = tiny_setup(7);
        let cfg = TrainConfig {
            regime: Regime::Fim { mu: 0.01 },
            epochs: 2,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 11,
        };
        let (a, _) = train(build_mlp(8, &[12], 3, 7), &train_d, &test_d, &cfg).unwrap();
        let (b, _) = train(build_mlp(8, &[12], 3, 7), &train_d, &test_d, &cfg).unwrap();
        assert_eq!(weights_of(&a), weights_of(&b));
    }

    #[test]
    fn loss_decomposition_holds_every_epoch() {
        let (train_d, test_d, net) = tiny_setup(9);
        let cfg = TrainConfig {
            regime: Regime::Fim { mu: 0.05 },
            epochs: 3,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 1,
        };
        let (_, log) = train(net, &train_d, &test_d, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 3);
        for e in &log.epochs {
            assert!((e.ce + e.reg - e.loss).abs() < 1e-6, "epoch {}: {e:?}", e.epoch);
            assert!(e.reg > 0.0, "penalty should be active");
        }
    }

    #[test]
    fn nan_weights_abort_with_a_located_diagnostic() {
        let (train_d, test_d, mut net) = tiny_setup(13);
        {
            // Poison the final-layer bias: unlike an early weight, nothing
            // downstream (no relu) can mask the NaN before the softmax.
            let mut params = net.parameters_mut();
            let last = params.last_mut().unwrap();
            let shape = last.shape().to_vec();
            let mut data = last.data().to_vec();
            data[0] = f64::NAN;
            **last = Tensor::from_vec(data, &shape).tracked();
        }
        let cfg = TrainConfig {
            regime: Regime::Baseline,
            epochs: 1,
            batch_size: 16,
            lr: 0.05,
            momentum: 0.9,
            seed: 1,
        };
        let err = train(net, &train_d, &test_d, &cfg).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("epoch 0"), "diagnostic should name the epoch: {msg}");
    }

    #[test]
    fn evaluate_accuracy_trivial_cases() {
        // Zero weights → uniform output → argmax ties to class 0; on a
        // grouped balanced set that is exactly 1/K.
        let data = synthetic_blobs(10, 5, 4, 21).unwrap();
        let mut net = build_mlp(4, &[], 10, 1);
        for p in net.parameters_mut() {
            *p = Tensor::zeros(p.shape()).tracked();
        }
        assert!((evaluate_accuracy(&net, &data) - 0.1).abs() < 1e-12);
        assert!((mean_max_probability(&net, &data) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn evaluate_accuracy_matches_a_hand_recount() {
        let data = synthetic_blobs(3, 7, 6, 33).unwrap();
        let net = build_mlp(6, &[5], 3, 2);
        let mut correct = 0;
        for i in 0..data.len() {
            if net.classify_one(data.image(i)) == data.label(i) {
                correct += 1;
            }
        }
        let want = correct as f64 / data.len() as f64;
        assert!((evaluate_accuracy(&net, &data) - want).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let base = TrainConfig {
            regime: Regime::Baseline,
            epochs: 1,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        };
        assert!(base.validate().is_ok());
        for bad in [
            TrainConfig { regime: Regime::Fim { mu: -0.1 }, ..base.clone() },
            TrainConfig { regime: Regime::Lsr { alpha: 0.0 }, ..base.clone() },
            TrainConfig { regime: Regime::Lsr { alpha: 1.0 }, ..base.clone() },
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { lr: 0.0, ..base.clone() },
            TrainConfig { momentum: 1.0, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn train_config_serde_defaults() {
        let cfg: TrainConfig =
            serde_json::from_str(r#"{"regime":{"name":"fim","mu":0.022}}"#).unwrap();
        assert_eq!(cfg.regime, Regime::Fim { mu: 0.022 });
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 64);
        assert!((cfg.lr - 0.05).abs() < 1e-12);
        assert!((cfg.momentum - 0.9).abs() < 1e-12);
        assert_eq!(cfg.seed, 0);
    }
}
