//! Report assembly and persistence.
//!
//! A [`RobustnessReport`] is one self-describing JSON document plus four
//! flat CSV views of the same data (`curves.csv`, `distances.csv`,
//! `transfer.csv`, `per_sample.csv`). The JSON nests everything — including
//! the per-sample records — so any aggregate in it can be recomputed from
//! the same file. Output is deterministic for a fixed seed and thread count
//! except the `generated_at` stamp, which lives in metadata only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::NormKind;
use crate::error::{Error, Result};
use crate::eval::{CurvePointRun, DistanceRecord, SampleRecord, TransferResult};
use crate::models::ArchDescriptor;

/// Identity of one evaluated model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub weights_hash: String,
    pub arch: ArchDescriptor,
}

/// Run-level context: everything needed to reproduce the numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMetadata {
    /// Seconds since the Unix epoch at write time (the one
    /// non-deterministic field).
    pub generated_at: u64,
    pub seed: u64,
    pub threads: usize,
    pub models: Vec<ModelInfo>,
    /// Attack configurations as parsed, echoed back verbatim.
    pub attacks: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub ratio: f64,
    pub n: usize,
}

/// Fooling ratio as a function of ε for one (attack, model) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoolingCurve {
    pub attack: String,
    pub model: String,
    /// Whether the measured ratios were non-decreasing in ε. Recorded,
    /// not enforced: a dip is data, not a bug.
    pub monotone: bool,
    pub points: Vec<CurvePoint>,
}

impl FoolingCurve {
    pub fn from_runs(attack: &str, model: &str, runs: &[CurvePointRun]) -> Self {
        let points: Vec<CurvePoint> = runs
            .iter()
            .map(|r| CurvePoint { epsilon: r.epsilon, ratio: r.ratio, n: r.n })
            .collect();
        let monotone = points.windows(2).all(|w| w[0].ratio <= w[1].ratio);
        FoolingCurve { attack: attack.into(), model: model.into(), monotone, points }
    }
}

/// Mean adversarial distance for one (attack, model) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceRow {
    pub attack: String,
    pub model: String,
    pub norm: NormKind,
    /// `None` when no sample succeeded (the mean would be over nothing).
    pub mean_distance: Option<f64>,
    pub n_success: usize,
    pub n_total: usize,
}

/// One source→destination transfer measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRow {
    pub attack: String,
    pub src_model: String,
    pub dst_model: String,
    pub accuracy: f64,
    pub accuracy_on_success: Option<f64>,
    pub n: usize,
    pub n_success: usize,
}

impl TransferRow {
    pub fn new(attack: &str, src: &str, dst: &str, r: TransferResult) -> Self {
        TransferRow {
            attack: attack.into(),
            src_model: src.into(),
            dst_model: dst.into(),
            accuracy: r.accuracy,
            accuracy_on_success: r.accuracy_on_success,
            n: r.n,
            n_success: r.n_success,
        }
    }
}

/// Flattened per-sample outcome; the recomputation substrate for every
/// aggregate above.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerSampleRow {
    pub kind: String,
    pub model: String,
    pub attack: String,
    /// Budget the attack ran with; empty for minimizing attacks.
    pub epsilon: Option<f64>,
    pub index: usize,
    pub y_true: usize,
    pub label_before: usize,
    pub label_after: usize,
    pub norm: f64,
    pub success: bool,
    pub queries: usize,
}

impl PerSampleRow {
    pub fn from_record(
        kind: &str,
        model: &str,
        attack: &str,
        epsilon: Option<f64>,
        r: &SampleRecord,
    ) -> Self {
        PerSampleRow {
            kind: kind.into(),
            model: model.into(),
            attack: attack.into(),
            epsilon,
            index: r.index,
            y_true: r.y_true,
            label_before: r.outcome.label_before,
            label_after: r.outcome.label_after,
            norm: r.outcome.achieved_norm,
            success: r.fooled(),
            queries: r.outcome.queries,
        }
    }

    pub fn from_distance(model: &str, attack: &str, r: &DistanceRecord) -> Self {
        PerSampleRow {
            kind: "distance".into(),
            model: model.into(),
            attack: attack.into(),
            epsilon: None,
            index: r.index,
            y_true: 0,
            label_before: 0,
            label_after: 0,
            norm: r.distance,
            success: r.success,
            queries: 0,
        }
    }
}

/// The full evaluation output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub metadata: ReportMetadata,
    pub curves: Vec<FoolingCurve>,
    pub distances: Vec<DistanceRow>,
    pub transfers: Vec<TransferRow>,
    pub per_sample: Vec<PerSampleRow>,
}

/// Flat row for `curves.csv`.
#[derive(Serialize)]
struct CurveCsvRow<'a> {
    attack: &'a str,
    model: &'a str,
    epsilon: f64,
    ratio: f64,
    n: usize,
}

impl RobustnessReport {
    pub fn new(seed: u64, threads: usize, models: Vec<ModelInfo>) -> Self {
        let generated_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        RobustnessReport {
            metadata: ReportMetadata {
                generated_at,
                seed,
                threads,
                models,
                attacks: Vec::new(),
            },
            curves: Vec::new(),
            distances: Vec::new(),
            transfers: Vec::new(),
            per_sample: Vec::new(),
        }
    }

    /// Write `report.json` and the four CSV views into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join("report.json");
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;

        let curves_path = dir.join("curves.csv");
        let mut wtr = csv::Writer::from_path(&curves_path)?;
        for c in &self.curves {
            for p in &c.points {
                wtr.serialize(CurveCsvRow {
                    attack: &c.attack,
                    model: &c.model,
                    epsilon: p.epsilon,
                    ratio: p.ratio,
                    n: p.n,
                })?;
            }
        }
        wtr.flush().map_err(|e| Error::io(&curves_path, e))?;

        write_csv(&dir.join("distances.csv"), &self.distances)?;
        write_csv(&dir.join("transfer.csv"), &self.transfers)?;
        write_csv(&dir.join("per_sample.csv"), &self.per_sample)?;
        Ok(())
    }

    /// Read back a previously written `report.json`.
    pub fn read(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// The report with its timestamp zeroed, for determinism comparisons.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.metadata.generated_at = 0;
        out
    }
}

/// Serialize `rows` to a headered CSV file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
