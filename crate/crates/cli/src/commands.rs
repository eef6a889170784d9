//! The four subcommands. Each takes a fully-resolved [`RunConfig`], writes
//! its outputs (and the resolved config) under `output.dir`, and returns a
//! typed error for `main` to map onto an exit code. Validation runs before
//! anything is written, so a failing run leaves no partial outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use fimguard_core::attacks::AttackSpec;
use fimguard_core::data::{idx, LabeledDataset};
use fimguard_core::eval::report::{
    write_csv, DistanceRow, FoolingCurve, ModelInfo, PerSampleRow, RobustnessReport, TransferRow,
};
use fimguard_core::eval::{
    adversarial_distances, cross_model_transfer, eligible_indices, fooling_curve,
    fooling_ratio_of, intersection_eligible, mean_adv_distance, run_attack,
};
use fimguard_core::fim::{
    fim_trace, input_fim_quadratic, input_jacobian, ossa_direction, output_fim,
    ProbabilityVector,
};
use fimguard_core::linalg::jacobi_eigen;
use fimguard_core::models::checkpoint::{load_snapshot, save_checkpoint};
use fimguard_core::models::{Network, NetworkSnapshot};
use fimguard_core::trainer;
use fimguard_core::{Error, Result};

use crate::config::{EvalMode, RunConfig};

pub const ATTACK_NAMES: [&str; 11] = [
    "ossa", "fgsm", "fgm", "otcm", "bim_l1", "bim_l2", "bim_linf", "pgd", "deepfool", "jsma",
    "cw_l2",
];

/// Train per the config; write checkpoint, training log, and resolved
/// config. Prints the per-epoch log and the final weights hash.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let core_cfg = cfg.train.to_core()?;
    let (train_data, test_data) = cfg.build_datasets()?;
    let net = cfg.build_model(&train_data)?;
    println!(
        "train: {} regime on {} train / {} test samples, {} epochs",
        cfg.train.regime,
        train_data.len(),
        test_data.len(),
        core_cfg.epochs
    );
    let t0 = Instant::now();
    let (net, log) = trainer::train(net, &train_data, &test_data, &core_cfg)?;
    for e in &log.epochs {
        println!(
            "  epoch {} loss {:.4} (ce {:.4} + reg {:.4}) test_acc {:.4} mean_maxp {:.4}",
            e.epoch, e.loss, e.ce, e.reg, e.test_acc, e.mean_maxp
        );
    }
    let dir = &cfg.output.dir;
    cfg.write_resolved(dir)?;
    let ckpt_path = dir.join("model.ckpt");
    save_checkpoint(&net, &ckpt_path, Some(serde_json::to_value(cfg)?))?;
    let log_path = dir.join("trainlog.csv");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    log.write_csv(file)?;
    println!(
        "train: done in {:.1}s, checkpoint {} (weights {})",
        t0.elapsed().as_secs_f64(),
        ckpt_path.display(),
        &net.snapshot().weights_hash()[..12]
    );
    Ok(())
}

/// Find the named attack in the config, or build it from its defaults.
/// `eps` overrides the budget either way.
fn resolve_attack(cfg: &RunConfig, name: &str, eps: Option<f64>) -> Result<AttackSpec> {
    if !ATTACK_NAMES.contains(&name) {
        return Err(Error::Config(format!(
            "unknown attack {name:?}; valid names: {}",
            ATTACK_NAMES.join(", ")
        )));
    }
    let base = match cfg.attacks.iter().find(|a| a.name() == name) {
        Some(found) => found.clone(),
        None => {
            // Minimizers (and anything else fully defaulted) construct from
            // the bare name; budgeted attacks additionally need a budget.
            let bare = serde_json::from_value(json!({ "name": name }));
            match (bare, eps) {
                (Ok(spec), _) => spec,
                (Err(_), Some(e)) => {
                    serde_json::from_value(json!({ "name": name, "epsilon": e }))?
                }
                (Err(_), None) => {
                    return Err(Error::Config(format!(
                        "attack {name} is not in the config and needs --eps to construct"
                    )))
                }
            }
        }
    };
    match eps {
        Some(e) => base.with_epsilon(e).ok_or_else(|| {
            Error::Config(format!("attack {name} minimizes distance; it takes no --eps"))
        }),
        None => Ok(base),
    }
}

/// Attack one checkpoint over the test set; write per-sample outcomes and
/// (optionally) the adversarial images in IDX layout.
pub fn cmd_attack(
    cfg: &RunConfig,
    ckpt: &Path,
    attack_name: &str,
    eps: Option<f64>,
    dump_images: bool,
    threads: usize,
) -> Result<()> {
    let spec = resolve_attack(cfg, attack_name, eps)?;
    let (snap, _manifest) = load_snapshot(ckpt)?;
    let (_, test_data) = cfg.build_datasets()?;
    check_compat(&snap, &test_data, ckpt)?;
    let net = snap.instantiate()?;
    let indices = eligible_indices(&net, &test_data, cfg.eval.samples);
    let records = run_attack(&snap, &test_data, &indices, &spec, cfg.eval.seed, threads)?;
    let (ratio, n) = fooling_ratio_of(&records);

    let dir = &cfg.output.dir;
    cfg.write_resolved(dir)?;
    let model_name = model_name_of(ckpt);
    let rows: Vec<PerSampleRow> = records
        .iter()
        .map(|r| PerSampleRow::from_record("attack", &model_name, spec.name(), spec.epsilon(), r))
        .collect();
    write_csv(&dir.join("per_sample.csv"), &rows)?;
    if dump_images {
        let (_, h, w) = test_data.image_shape();
        let mut flat = Vec::with_capacity(records.len() * h * w);
        let mut labels = Vec::with_capacity(records.len());
        for r in &records {
            flat.extend_from_slice(&r.outcome.x_adv);
            labels.push(r.outcome.label_after);
        }
        idx::write_idx_images(&dir.join("adv-images-idx3-ubyte"), &flat, h, w)?;
        idx::write_idx_labels(&dir.join("adv-labels-idx1-ubyte"), &labels)?;
    }
    println!(
        "attack {}: fooling ratio {:.4} over {} eligible samples ({} written)",
        spec.name(),
        ratio,
        n,
        dir.join("per_sample.csv").display()
    );
    Ok(())
}

/// Full evaluation across one or more checkpoints: fooling curves,
/// adversarial distances, and (with ≥2 models) cross-model transfer.
pub fn cmd_eval(cfg: &RunConfig, ckpts: &[PathBuf], threads: usize) -> Result<()> {
    let (_, test_data) = cfg.build_datasets()?;
    let mut snaps = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for p in ckpts {
        let (snap, _) = load_snapshot(p)?;
        check_compat(&snap, &test_data, p)?;
        let mut name = model_name_of(p);
        let mut suffix = 2;
        while names.contains(&name) {
            name = format!("{}-{suffix}", model_name_of(p));
            suffix += 1;
        }
        names.push(name);
        snaps.push(snap);
    }
    let nets: Vec<Network> =
        snaps.iter().map(|s| s.instantiate()).collect::<Result<_>>()?;
    let infos: Vec<ModelInfo> = snaps
        .iter()
        .zip(&names)
        .map(|(s, n)| ModelInfo {
            name: n.clone(),
            weights_hash: s.weights_hash(),
            arch: s.arch.clone(),
        })
        .collect();

    let mut report = RobustnessReport::new(cfg.eval.seed, threads, infos);
    report.metadata.attacks = cfg
        .attacks
        .iter()
        .map(serde_json::to_value)
        .collect::<std::result::Result<_, _>>()?;

    for mode in &cfg.eval.modes {
        match mode {
            EvalMode::Curves => {
                for (mi, snap) in snaps.iter().enumerate() {
                    let idx = eligible_indices(&nets[mi], &test_data, cfg.eval.samples);
                    for attack in cfg.attacks.iter().filter(|a| a.is_budgeted()) {
                        let runs = fooling_curve(
                            snap,
                            &test_data,
                            &idx,
                            attack,
                            &cfg.eval.eps_grid,
                            cfg.eval.seed,
                            threads,
                        )?;
                        for run in &runs {
                            for r in &run.records {
                                report.per_sample.push(PerSampleRow::from_record(
                                    "curve",
                                    &names[mi],
                                    attack.name(),
                                    Some(run.epsilon),
                                    r,
                                ));
                            }
                        }
                        let curve = FoolingCurve::from_runs(attack.name(), &names[mi], &runs);
                        let last = curve.points.last().expect("non-empty grid");
                        println!(
                            "curve {}/{}: ratio {:.4} at ε={} (n={}){}",
                            curve.attack,
                            curve.model,
                            last.ratio,
                            last.epsilon,
                            last.n,
                            if curve.monotone { "" } else { "  [non-monotone]" }
                        );
                        report.curves.push(curve);
                    }
                }
            }
            EvalMode::Distances => {
                for (mi, snap) in snaps.iter().enumerate() {
                    let idx =
                        eligible_indices(&nets[mi], &test_data, cfg.eval.distance_samples);
                    for attack in &cfg.attacks {
                        let records = adversarial_distances(
                            snap,
                            &test_data,
                            &idx,
                            attack,
                            cfg.eval.seed,
                            threads,
                            cfg.eval.eps_max,
                        )?;
                        for r in &records {
                            report.per_sample.push(PerSampleRow::from_distance(
                                &names[mi],
                                attack.name(),
                                r,
                            ));
                        }
                        let (mean, n_success) = match mean_adv_distance(&records) {
                            Ok((m, n)) => (Some(m), n),
                            Err(_) => (None, 0),
                        };
                        println!(
                            "distance {}/{}: mean {} over {}/{} successes",
                            attack.name(),
                            names[mi],
                            mean.map_or("n/a".into(), |m| format!("{m:.4}")),
                            n_success,
                            records.len()
                        );
                        report.distances.push(DistanceRow {
                            attack: attack.name().into(),
                            model: names[mi].clone(),
                            norm: attack.norm_kind(),
                            mean_distance: mean,
                            n_success,
                            n_total: records.len(),
                        });
                    }
                }
            }
            EvalMode::Transfer => {
                if snaps.len() < 2 {
                    return Err(Error::Config(
                        "transfer mode needs at least two checkpoints".into(),
                    ));
                }
                for i in 0..snaps.len() {
                    for j in 0..snaps.len() {
                        if i == j {
                            continue;
                        }
                        let idx = intersection_eligible(
                            &nets[i],
                            &nets[j],
                            &test_data,
                            cfg.eval.transfer_samples,
                        );
                        for attack in &cfg.attacks {
                            let (result, records) = cross_model_transfer(
                                &snaps[i],
                                &snaps[j],
                                &test_data,
                                &idx,
                                attack,
                                cfg.eval.seed,
                                threads,
                            )?;
                            let pair = format!("{}->{}", names[i], names[j]);
                            for r in &records {
                                report.per_sample.push(PerSampleRow::from_record(
                                    "transfer",
                                    &pair,
                                    attack.name(),
                                    attack.epsilon(),
                                    r,
                                ));
                            }
                            println!(
                                "transfer {} {pair}: acc {:.4} (on {} fooled: {})",
                                attack.name(),
                                result.accuracy,
                                result.n_success,
                                result
                                    .accuracy_on_success
                                    .map_or("n/a".into(), |a| format!("{a:.4}")),
                            );
                            report.transfers.push(TransferRow::new(
                                attack.name(),
                                &names[i],
                                &names[j],
                                result,
                            ));
                        }
                    }
                }
            }
        }
    }

    let dir = &cfg.output.dir;
    cfg.write_resolved(dir)?;
    report.write(dir)?;
    println!("eval: report written to {}", dir.join("report.json").display());
    Ok(())
}

const CLAMP_MIN: f64 = 1e-12;

struct Check {
    name: &'static str,
    worst: f64,
    tol: f64,
}

impl Check {
    fn new(name: &'static str, tol: f64) -> Self {
        Check { name, worst: 0.0, tol }
    }
    fn feed(&mut self, err: f64) {
        if err > self.worst {
            self.worst = err;
        }
    }
    fn passed(&self) -> bool {
        self.worst <= self.tol
    }
    fn print(&self) {
        println!(
            "{} {:<18} worst {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tol
        );
    }
}

/// Fast invariant suite on a loaded checkpoint: trace identity, Jacobian
/// column sums, OSSA self-consistency, and power-vs-Jacobi agreement on the
/// reduced matrix, over 10 seeded random inputs. Degenerate (saturated)
/// samples downgrade the affected checks to a warning.
pub fn cmd_verify(ckpt: &Path) -> Result<bool> {
    use rand::{Rng, SeedableRng};
    let (snap, _manifest) = load_snapshot(ckpt)?;
    let net = snap.instantiate()?;
    let (c, h, w) = net.arch().input_shape();
    let k = net.arch().num_classes();
    let dim = c * h * w;
    println!("verify {}: {} inputs of dim {dim}, {k} classes", ckpt.display(), 10);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xF1);
    let mut trace_check = Check::new("trace-identity", 1e-9);
    let mut floor_check = Check::new("trace-floor", 1e-9);
    let mut colsum_check = Check::new("jacobian-colsums", 1e-8);
    let mut quad_check = Check::new("ossa-quadratic", 1e-6);
    let mut eig_check = Check::new("power-vs-jacobi", 1e-8);
    let mut degenerate = 0usize;

    for _ in 0..10 {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = ProbabilityVector::new(net.proba_one(&x))?;
        let trace = fim_trace(&p);
        let diag_sum = output_fim(&p).trace();
        trace_check.feed((trace - diag_sum).abs() / trace);
        floor_check.feed(((k * k) as f64 - trace).max(0.0) / (k * k) as f64);

        let jac = input_jacobian(&net, &x);
        for j in 0..dim {
            let col: f64 = (0..k).map(|i| jac.row(i)[j]).sum();
            colsum_check.feed(col.abs());
        }

        let y = fimguard_core::models::argmax(p.as_slice());
        let loss = |z: &[f64]| -net.proba_one(z)[y].max(CLAMP_MIN).ln();
        let spectral = ossa_direction(&net, &x, loss)?;
        if spectral.degenerate {
            degenerate += 1;
            continue;
        }
        let quad = input_fim_quadratic(&net, &x, &spectral.eta_unit);
        quad_check
            .feed((quad - spectral.lambda_max).abs() / spectral.lambda_max.max(f64::MIN_POSITIVE));
        let (values, _) = jacobi_eigen(&spectral.reduced_matrix, k);
        eig_check
            .feed((values[0] - spectral.lambda_max).abs() / values[0].max(f64::MIN_POSITIVE));
    }

    let checks = [trace_check, floor_check, colsum_check, quad_check, eig_check];
    for c in &checks {
        c.print();
    }
    if degenerate > 0 {
        println!("WARN ossa-direction     {degenerate}/10 samples degenerate (saturated softmax)");
    }
    Ok(checks.iter().all(Check::passed))
}

/// Architecture/data agreement: shapes and class counts must line up
/// before any sample is attacked.
fn check_compat(snap: &NetworkSnapshot, data: &LabeledDataset, ckpt: &Path) -> Result<()> {
    if snap.arch.input_shape() != data.image_shape() {
        return Err(Error::Config(format!(
            "checkpoint {} expects input {:?} but the dataset has {:?}",
            ckpt.display(),
            snap.arch.input_shape(),
            data.image_shape()
        )));
    }
    if snap.arch.num_classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint {} has {} classes but the dataset has {}",
            ckpt.display(),
            snap.arch.num_classes(),
            data.num_classes()
        )));
    }
    Ok(())
}

fn model_name_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}
