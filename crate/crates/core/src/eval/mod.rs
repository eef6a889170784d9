//! Robustness measurement over frozen models: fooling ratios and curves,
//! adversarial distance statistics, cross-model transfer, and label
//! distribution snapshots.
//!
//! Sample eligibility follows the "originally correctly classified" rule:
//! ratios are computed only over samples the model got right before the
//! attack, and any comparison between two models restricts further to the
//! intersection of both eligible sets so accuracy differences cannot
//! masquerade as robustness differences.
//!
//! Per-sample work is embarrassingly parallel: workers share nothing but a
//! [`NetworkSnapshot`] (plain data) and each instantiates a private network,
//! so results are identical for any thread count. Aggregates are plain sums
//! over per-sample records, and the records themselves are part of every
//! report, keeping each ratio recomputable after the fact.

pub mod report;

use crate::attacks::{self, AttackOutcome, AttackSpec, NormKind};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{Network, NetworkSnapshot};
use crate::tensor::Tensor;

/// `‖x_adv − x‖` in the given norm (l0 uses the 1e-12 change tolerance).
pub fn perturbation_norm(x: &[f64], x_adv: &[f64], kind: NormKind) -> f64 {
    assert_eq!(x.len(), x_adv.len(), "inputs differ in dimension");
    let eta: Vec<f64> = x_adv.iter().zip(x).map(|(a, b)| a - b).collect();
    attacks::perturbation_norm(&eta, kind)
}

/// Indices of the first `limit` samples the model classifies correctly.
pub fn eligible_indices(net: &Network, data: &LabeledDataset, limit: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..data.len() {
        if out.len() == limit {
            break;
        }
        if net.classify_one(data.image(i)) == data.label(i) {
            out.push(i);
        }
    }
    out
}

/// Indices both models classify correctly — the comparison sample set.
pub fn intersection_eligible(
    a: &Network,
    b: &Network,
    data: &LabeledDataset,
    limit: usize,
) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..data.len() {
        if out.len() == limit {
            break;
        }
        let y = data.label(i);
        if a.classify_one(data.image(i)) == y && b.classify_one(data.image(i)) == y {
            out.push(i);
        }
    }
    out
}

/// One attacked sample, with the full outcome retained (the adversarial
/// image included) so transfer and reporting never re-run the attack.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub index: usize,
    pub y_true: usize,
    pub outcome: AttackOutcome,
}

impl SampleRecord {
    /// Harness-side success: correctly classified before, wrong after.
    pub fn fooled(&self) -> bool {
        self.outcome.label_before == self.y_true && self.outcome.label_after != self.y_true
    }
}

/// Fan `f` out over `indices` on `threads` workers, each with its own
/// network instantiated from the snapshot. Output order follows `indices`
/// regardless of thread count.
fn parallel_over<T, F>(
    snap: &NetworkSnapshot,
    indices: &[usize],
    threads: usize,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&Network, usize) -> Result<T> + Sync,
{
    let threads = threads.clamp(1, indices.len().max(1));
    if threads == 1 {
        let net = snap.instantiate()?;
        return indices.iter().map(|&i| f(&net, i)).collect();
    }
    let chunk_len = indices.len().div_ceil(threads);
    let chunk_results: Vec<Result<Vec<T>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = indices
            .chunks(chunk_len)
            .map(|chunk| {
                scope.spawn(|| -> Result<Vec<T>> {
                    let net = snap.instantiate()?;
                    chunk.iter().map(|&i| f(&net, i)).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(indices.len());
    for r in chunk_results {
        out.extend(r?);
    }
    Ok(out)
}

/// Run one attack over the eligible samples. Per-sample seeds are
/// `seed ⊕ index`, so records do not depend on batch composition.
pub fn run_attack(
    snap: &NetworkSnapshot,
    data: &LabeledDataset,
    indices: &[usize],
    attack: &AttackSpec,
    seed: u64,
    threads: usize,
) -> Result<Vec<SampleRecord>> {
    if indices.is_empty() {
        return Err(Error::EmptyEligibleSet(format!(
            "attack {} has no eligible samples",
            attack.name()
        )));
    }
    parallel_over(snap, indices, threads, |net, i| {
        let y = data.label(i);
        let outcome = attack.run(net, data.image(i), y, seed ^ i as u64)?;
        Ok(SampleRecord { index: i, y_true: y, outcome })
    })
}

/// Fraction of records whose label left the true class.
pub fn fooling_ratio_of(records: &[SampleRecord]) -> (f64, usize) {
    assert!(!records.is_empty(), "fooling ratio over an empty record set");
    let fooled = records.iter().filter(|r| r.fooled()).count();
    (fooled as f64 / records.len() as f64, records.len())
}

/// Attack, then measure: the (ratio, eligible count) pair.
pub fn fooling_ratio(
    snap: &NetworkSnapshot,
    data: &LabeledDataset,
    indices: &[usize],
    attack: &AttackSpec,
    seed: u64,
    threads: usize,
) -> Result<(f64, usize)> {
    let records = run_attack(snap, data, indices, attack, seed, threads)?;
    Ok(fooling_ratio_of(&records))
}

/// One measured curve point plus the records behind it.
#[derive(Debug)]
pub struct CurvePointRun {
    pub epsilon: f64,
    pub ratio: f64,
    pub n: usize,
    pub records: Vec<SampleRecord>,
}

/// Sweep a budgeted attack over a strictly increasing ε grid. Whether the
/// ratio came out monotone is recorded, never asserted.
pub fn fooling_curve(
    snap: &NetworkSnapshot,
    data: &LabeledDataset,
    indices: &[usize],
    attack: &AttackSpec,
    grid: &[f64],
    seed: u64,
    threads: usize,
) -> Result<Vec<CurvePointRun>> {
    assert!(!grid.is_empty(), "empty epsilon grid");
    assert!(
        grid.windows(2).all(|w| w[0] < w[1]),
        "epsilon grid must be strictly increasing: {grid:?}"
    );
    let mut points = Vec::with_capacity(grid.len());
    for &eps in grid {
        let swept = attack.with_epsilon(eps).ok_or_else(|| {
            Error::Config(format!("attack {} is not budgeted; no ε sweep", attack.name()))
        })?;
        let records = run_attack(snap, data, indices, &swept, seed, threads)?;
        let (ratio, n) = fooling_ratio_of(&records);
        points.push(CurvePointRun { epsilon: eps, ratio, n, records });
    }
    Ok(points)
}

/// Per-sample result of a distance measurement.
#[derive(Debug, Clone, Copy)]
pub struct DistanceRecord {
    pub index: usize,
    pub success: bool,
    /// Achieved norm of the successful perturbation; 0 when `!success`.
    pub distance: f64,
}

/// Smallest adversarial distances per sample: minimizing attacks run once
/// and report their found norm; budgeted attacks get a 12-step bisection on
/// ε over `[0, eps_max]` with the per-sample seed held fixed across probes.
pub fn adversarial_distances(
    snap: &NetworkSnapshot,
    data: &LabeledDataset,
    indices: &[usize],
    attack: &AttackSpec,
    seed: u64,
    threads: usize,
    eps_max: f64,
) -> Result<Vec<DistanceRecord>> {
    if indices.is_empty() {
        return Err(Error::EmptyEligibleSet(format!(
            "distance measurement for {} has no eligible samples",
            attack.name()
        )));
    }
    if !attack.is_budgeted() {
        let records = run_attack(snap, data, indices, attack, seed, threads)?;
        return Ok(records
            .iter()
            .map(|r| DistanceRecord {
                index: r.index,
                success: r.fooled(),
                distance: if r.fooled() { r.outcome.achieved_norm } else { 0.0 },
            })
            .collect());
    }
    assert!(eps_max > 0.0, "bisection needs a positive eps_max");
    parallel_over(snap, indices, threads, |net, i| {
        let x = data.image(i);
        let y = data.label(i);
        let sample_seed = seed ^ i as u64;
        let run_at = |eps: f64| -> Result<AttackOutcome> {
            attack
                .with_epsilon(eps)
                .expect("is_budgeted checked above")
                .run(net, x, y, sample_seed)
        };
        let fooled =
            |o: &AttackOutcome| o.label_before == y && o.label_after != y;
        let top = run_at(eps_max)?;
        if !fooled(&top) {
            return Ok(DistanceRecord { index: i, success: false, distance: 0.0 });
        }
        let (mut lo, mut hi) = (0.0, eps_max);
        let mut best = top;
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            let probe = run_at(mid)?;
            if fooled(&probe) {
                hi = mid;
                best = probe;
            } else {
                lo = mid;
            }
        }
        Ok(DistanceRecord { index: i, success: true, distance: best.achieved_norm })
    })
}

/// Mean distance over successful samples; errors when nothing succeeded
/// (an empty mean would silently flatter the attack).
pub fn mean_adv_distance(records: &[DistanceRecord]) -> Result<(f64, usize)> {
    let successes: Vec<f64> =
        records.iter().filter(|r| r.success).map(|r| r.distance).collect();
    if successes.is_empty() {
        return Err(Error::EmptyEligibleSet(
            "no successful attacks; mean adversarial distance undefined".into(),
        ));
    }
    let n = successes.len();
    Ok((successes.iter().sum::<f64>() / n as f64, n))
}

/// Transfer measurement: how well the destination model survives
/// adversarial examples crafted against the source.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransferResult {
    /// dst accuracy over all attacked eligible samples.
    pub accuracy: f64,
    /// dst accuracy restricted to samples that actually fooled src;
    /// `None` when the attack fooled nothing.
    pub accuracy_on_success: Option<f64>,
    pub n: usize,
    pub n_success: usize,
}

/// Craft adversarial examples on `src` (over the intersection-eligible
/// `indices`) and classify them with `dst`.
pub fn cross_model_transfer(
    src: &NetworkSnapshot,
    dst: &NetworkSnapshot,
    data: &LabeledDataset,
    indices: &[usize],
    attack: &AttackSpec,
    seed: u64,
    threads: usize,
) -> Result<(TransferResult, Vec<SampleRecord>)> {
    let records = run_attack(src, data, indices, attack, seed, threads)?;
    let dst_net = dst.instantiate()?;
    let (c, h, w) = dst_net.arch().input_shape();
    let mut flat = Vec::with_capacity(records.len() * c * h * w);
    for r in &records {
        flat.extend_from_slice(&r.outcome.x_adv);
    }
    let batch = Tensor::from_vec(flat, &[records.len(), c, h, w]);
    let dst_labels = dst_net.classify(&batch);
    let mut correct_all = 0usize;
    let mut correct_on_success = 0usize;
    let mut n_success = 0usize;
    for (r, &dl) in records.iter().zip(&dst_labels) {
        let ok = dl == r.y_true;
        correct_all += usize::from(ok);
        if r.fooled() {
            n_success += 1;
            correct_on_success += usize::from(ok);
        }
    }
    let result = TransferResult {
        accuracy: correct_all as f64 / records.len() as f64,
        accuracy_on_success: (n_success > 0)
            .then(|| correct_on_success as f64 / n_success as f64),
        n: records.len(),
        n_success,
    };
    Ok((result, records))
}

/// The softmax vector at one input, for bar-chart style inspection.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub true_label: usize,
}

pub fn label_distribution_snapshot(
    net: &Network,
    x: &[f64],
    true_label: usize,
) -> LabelDistribution {
    let probs = net.proba_one(x);
    let predicted = crate::models::argmax(&probs);
    LabelDistribution { probs, predicted, true_label }
}
