//! Report artifact contracts: regeneration determinism (identical up to the
//! timestamp), aggregate recomputability from the persisted per-sample rows,
//! and bit-exact float round-trips through the CSV layer.

use fimguard_core::attacks::AttackSpec;
use fimguard_core::data::synth::synthetic_blobs;
use fimguard_core::eval::report::{
    CurvePoint, FoolingCurve, ModelInfo, PerSampleRow, RobustnessReport,
};
use fimguard_core::eval::{eligible_indices, fooling_curve};
use fimguard_core::models::{build_mlp, NetworkSnapshot};
use fimguard_core::trainer::{train, Regime, TrainConfig};
use std::fs;
use std::path::PathBuf;

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fimguard-report-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn build_report(dir: &PathBuf) -> RobustnessReport {
    let data = synthetic_blobs(3, 30, 8, 11).unwrap();
    let net = build_mlp(8, &[10], 3, 6);
    let cfg = TrainConfig {
        regime: Regime::Baseline,
        epochs: 3,
        batch_size: 16,
        lr: 0.1,
        momentum: 0.5,
        seed: 2,
    };
    let (net, _) = train(net, &data, &data, &cfg).unwrap();
    let snap = net.snapshot();
    let idx = eligible_indices(&net, &data, 40);

    let attack = AttackSpec::Fgm { epsilon: 1.0 };
    let grid = [0.1, 0.3, 0.6];
    let runs = fooling_curve(&snap, &data, &idx, &attack, &grid, 7, 1).unwrap();

    let info = ModelInfo {
        name: "blob".into(),
        weights_hash: snap.weights_hash(),
        arch: snap.arch.clone(),
    };
    let mut report = RobustnessReport::new(7, 1, vec![info]);
    report.curves.push(FoolingCurve::from_runs("fgm", "blob", &runs));
    for run in &runs {
        for r in &run.records {
            report.per_sample.push(PerSampleRow::from_record(
                "curve",
                "blob",
                "fgm",
                Some(run.epsilon),
                r,
            ));
        }
    }
    report.write(dir).unwrap();
    report
}

#[test]
fn regenerated_report_is_identical_except_timestamp() {
    let d1 = tmpdir("gen1");
    let d2 = tmpdir("gen2");
    let r1 = build_report(&d1);
    std::thread::sleep(std::time::Duration::from_millis(1100));
    let r2 = build_report(&d2);

    let v1 = serde_json::to_value(r1.normalized()).unwrap();
    let v2 = serde_json::to_value(r2.normalized()).unwrap();
    assert_eq!(v1, v2, "normalized reports must match bit for bit");

    // The CSV artifacts carry no timestamp at all.
    for f in ["curves.csv", "per_sample.csv", "distances.csv", "transfer.csv"] {
        assert_eq!(
            fs::read(d1.join(f)).unwrap(),
            fs::read(d2.join(f)).unwrap(),
            "{f} differs between regenerations"
        );
    }
}

#[test]
fn report_json_round_trips_through_disk() {
    let dir = tmpdir("roundtrip");
    let written = build_report(&dir);
    let read = RobustnessReport::read(&dir.join("report.json")).unwrap();
    assert_eq!(
        serde_json::to_value(written.normalized()).unwrap(),
        serde_json::to_value(read.normalized()).unwrap()
    );
    assert_eq!(written.metadata.generated_at, read.metadata.generated_at);
}

#[test]
fn curve_ratios_recompute_from_per_sample_rows() {
    let dir = tmpdir("recompute");
    let report = build_report(&dir);

    let mut rows: Vec<PerSampleRow> = Vec::new();
    let mut rdr = csv::Reader::from_path(dir.join("per_sample.csv")).unwrap();
    for row in rdr.deserialize() {
        rows.push(row.unwrap());
    }
    assert!(!rows.is_empty());

    let curve = &report.curves[0];
    for point in &curve.points {
        let at: Vec<&PerSampleRow> = rows
            .iter()
            .filter(|r| r.kind == "curve" && r.epsilon == Some(point.epsilon))
            .collect();
        assert_eq!(at.len(), point.n, "eligible count at ε={}", point.epsilon);
        let fooled = at.iter().filter(|r| r.success).count();
        assert_eq!(
            fooled as f64 / at.len() as f64,
            point.ratio,
            "ratio at ε={} must recompute exactly",
            point.epsilon
        );
        // success is itself re-derivable from the labels.
        for r in &at {
            assert_eq!(r.success, r.label_before == r.y_true && r.label_after != r.y_true);
        }
    }
}

#[test]
fn csv_preserves_ratio_bits() {
    let dir = tmpdir("bits");
    // A ratio with no short decimal representation.
    let ugly = 1.0 / 3.0 + 1e-16;
    let rows = vec![CurvePoint { epsilon: 0.1, ratio: ugly, n: 3 }];
    let path = dir.join("points.csv");
    fimguard_core::eval::report::write_csv(&path, &rows).unwrap();

    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let back: CurvePoint = rdr.deserialize().next().unwrap().unwrap();
    assert_eq!(back.ratio.to_bits(), ugly.to_bits());
}

#[test]
fn snapshots_cross_thread_reports_are_stable() {
    // Same curve computed with 1 and 3 worker threads must agree exactly;
    // the report layer never depends on scheduling.
    let data = synthetic_blobs(3, 30, 8, 11).unwrap();
    let net = build_mlp(8, &[10], 3, 6);
    let cfg = TrainConfig {
        regime: Regime::Baseline,
        epochs: 3,
        batch_size: 16,
        lr: 0.1,
        momentum: 0.5,
        seed: 2,
    };
    let (net, _) = train(net, &data, &data, &cfg).unwrap();
    let snap: NetworkSnapshot = net.snapshot();
    let idx = eligible_indices(&net, &data, 30);
    let attack = AttackSpec::Pgd { epsilon: 0.5, steps: 5, step_size: None };
    let grid = [0.2, 0.5];

    let a = fooling_curve(&snap, &data, &idx, &attack, &grid, 3, 1).unwrap();
    let b = fooling_curve(&snap, &data, &idx, &attack, &grid, 3, 3).unwrap();
    let ca = FoolingCurve::from_runs("pgd", "blob", &a);
    let cb = FoolingCurve::from_runs("pgd", "blob", &b);
    assert_eq!(
        serde_json::to_value(&ca).unwrap(),
        serde_json::to_value(&cb).unwrap()
    );
}
