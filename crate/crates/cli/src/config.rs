//! The run configuration: one JSON document with `data`, `model`, `train`,
//! `attacks`, `eval`, and `output` sections, every field defaulted so a
//! missing config file still describes a complete run. `--set key=value`
//! overrides are applied to the raw JSON before typed parsing, so typos in
//! overridden keys are rejected exactly like typos in the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use fimguard_core::attacks::AttackSpec;
use fimguard_core::data::synth::{synthetic_blobs, synthetic_digits};
use fimguard_core::data::{idx, LabeledDataset};
use fimguard_core::models::{build_convnet, build_mlp, Network};
use fimguard_core::trainer::{Regime, TrainConfig};
use fimguard_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    SyntheticDigits,
    Blobs,
    MnistIdx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "d_source")]
    pub source: DataSource,
    /// Dataset root for `mnist_idx`; falls back to $FIMGUARD_DATA_DIR.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "d_train_count")]
    pub train_count: usize,
    #[serde(default = "d_test_count")]
    pub test_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Blobs only: class count and input dimension.
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_dim")]
    pub dim: usize,
}

fn d_source() -> DataSource {
    DataSource::SyntheticDigits
}
fn d_train_count() -> usize {
    10_000
}
fn d_test_count() -> usize {
    2_000
}
fn d_classes() -> usize {
    10
}
fn d_dim() -> usize {
    16
}

impl Default for DataConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are total")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    Convnet,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_arch")]
    pub arch: ArchKind,
    /// MLP hidden widths; ignored by the convnet.
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn d_arch() -> ArchKind {
    ArchKind::Convnet
}
fn d_hidden() -> Vec<usize> {
    vec![128]
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are total")
    }
}

/// Training section, flat so that `--set train.mu=…` works: the regime is
/// a plain string plus scalar knobs rather than a tagged enum.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_regime")]
    pub regime: String,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_regime() -> String {
    "baseline".into()
}
fn d_alpha() -> f64 {
    0.1
}
fn d_epochs() -> usize {
    3
}
fn d_batch() -> usize {
    64
}
fn d_lr() -> f64 {
    0.05
}
fn d_momentum() -> f64 {
    0.9
}

impl Default for TrainSection {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are total")
    }
}

impl TrainSection {
    /// Lower to the validated core config.
    pub fn to_core(&self) -> Result<TrainConfig> {
        let regime = match self.regime.as_str() {
            "baseline" => Regime::Baseline,
            "fim" => Regime::Fim { mu: self.mu },
            "lsr" => Regime::Lsr { alpha: self.alpha },
            other => {
                return Err(Error::Config(format!(
                    "unknown train.regime {other:?}; expected baseline, fim, or lsr"
                )))
            }
        };
        let cfg = TrainConfig {
            regime,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Curves,
    Distances,
    Transfer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Eligible-sample budget per fooling-curve point.
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "d_distance_samples")]
    pub distance_samples: usize,
    #[serde(default = "d_distance_samples")]
    pub transfer_samples: usize,
    /// Bisection ceiling for smallest-ε searches.
    #[serde(default = "d_eps_max")]
    pub eps_max: f64,
    #[serde(default = "d_modes")]
    pub modes: Vec<EvalMode>,
    #[serde(default = "d_eval_seed")]
    pub seed: u64,
}

fn d_samples() -> usize {
    500
}
fn d_grid() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 6.0]
}
fn d_distance_samples() -> usize {
    200
}
fn d_eps_max() -> f64 {
    8.0
}
fn d_modes() -> Vec<EvalMode> {
    vec![EvalMode::Curves, EvalMode::Distances, EvalMode::Transfer]
}
fn d_eval_seed() -> u64 {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("defaults are total")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out_dir")]
    pub dir: PathBuf,
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: d_out_dir() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Load from an optional file, apply `--set` overrides and the `--out`
    /// shortcut, then parse strictly.
    pub fn load(path: Option<&Path>, sets: &[String], out: Option<&Path>) -> Result<RunConfig> {
        let mut raw: Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)?
            }
            None => Value::Object(Default::default()),
        };
        if !raw.is_object() {
            return Err(Error::Config("config root must be a JSON object".into()));
        }
        for spec in sets {
            apply_set(&mut raw, spec)?;
        }
        if let Some(dir) = out {
            apply_set(&mut raw, &format!("output.dir={}", json_str(dir)))?;
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Write the fully-resolved document next to the run's outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved-config.json");
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    /// Build the (train, test) datasets this config describes.
    pub fn build_datasets(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let d = &self.data;
        match d.source {
            DataSource::SyntheticDigits => {
                let train = synthetic_digits(d.train_count, d.seed, 0)?;
                let test = synthetic_digits(d.test_count, d.seed, d.train_count as u64)?;
                Ok((train, test))
            }
            DataSource::Blobs => {
                let per_class = (d.train_count + d.test_count).div_ceil(d.classes);
                let all = synthetic_blobs(d.classes, per_class, d.dim, d.seed)?;
                split_per_class(&all, d.train_count.div_ceil(d.classes), per_class)
            }
            DataSource::MnistIdx => {
                let dir = d
                    .dir
                    .clone()
                    .or_else(|| std::env::var_os("FIMGUARD_DATA_DIR").map(PathBuf::from))
                    .ok_or_else(|| {
                        Error::Config(
                            "mnist_idx needs data.dir or the FIMGUARD_DATA_DIR env var".into(),
                        )
                    })?;
                let train = idx::load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = idx::load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                let clip = |ds: LabeledDataset, n: usize| if n > 0 { ds.take(n) } else { ds };
                Ok((clip(train, d.train_count), clip(test, d.test_count)))
            }
        }
    }

    /// Build the configured fresh (untrained) model for `data`'s shape.
    pub fn build_model(&self, data: &LabeledDataset) -> Result<Network> {
        let (c, h, w) = data.image_shape();
        match self.model.arch {
            ArchKind::Convnet => {
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::Config(format!(
                        "convnet needs height and width divisible by 4, got {h}x{w}"
                    )));
                }
                Ok(build_convnet((c, h, w), data.num_classes(), self.model.seed))
            }
            ArchKind::Mlp => Ok(build_mlp(
                data.input_dim(),
                &self.model.hidden,
                data.num_classes(),
                self.model.seed,
            )),
        }
    }
}

/// Class-blocked split: the first `n_train` samples of each class block go
/// to the train set, the rest to the test set.
fn split_per_class(
    all: &LabeledDataset,
    n_train: usize,
    per_class: usize,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let n_train = n_train.min(per_class.saturating_sub(1)).max(1);
    let shape = all.image_shape();
    let k = all.num_classes();
    let mut parts = [
        (Vec::new(), Vec::new()), // train
        (Vec::new(), Vec::new()), // test
    ];
    for i in 0..all.len() {
        let within = i % per_class;
        let side = usize::from(within >= n_train);
        parts[side].0.extend_from_slice(all.image(i));
        parts[side].1.push(all.label(i));
    }
    let [(tr_img, tr_lab), (te_img, te_lab)] = parts;
    Ok((
        LabeledDataset::new(tr_img, tr_lab, shape, k)?,
        LabeledDataset::new(te_img, te_lab, shape, k)?,
    ))
}

fn json_str(p: &Path) -> String {
    serde_json::to_string(&p.to_string_lossy()).expect("string serializes")
}

/// Apply one `key.path=value` override to the raw JSON document. Values
/// parse as JSON when they can (numbers, booleans, arrays) and fall back to
/// strings. Numeric path segments index into arrays.
pub fn apply_set(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {spec:?}")))?;
    let parts: Vec<&str> = path.split('.').collect();
    if path.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad --set key {path:?}")));
    }
    let leaf: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        cur = match cur {
            Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Default::default())),
            Value::Array(arr) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| Error::Config(format!("{part:?} is not an array index")))?;
                arr.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("--set index {i} out of bounds in {path}"))
                })?
            }
            _ => {
                return Err(Error::Config(format!(
                    "--set path {path} descends into a scalar at {part:?}"
                )))
            }
        };
    }
    let last = parts[parts.len() - 1];
    match cur {
        Value::Object(map) => {
            map.insert(last.to_string(), leaf);
        }
        Value::Array(arr) => {
            let i: usize = last
                .parse()
                .map_err(|_| Error::Config(format!("{last:?} is not an array index")))?;
            *arr.get_mut(i).ok_or_else(|| {
                Error::Config(format!("--set index {i} out of bounds in {path}"))
            })? = leaf;
        }
        _ => {
            return Err(Error::Config(format!(
                "--set path {path} overwrites inside a scalar"
            )))
        }
    }
    Ok(())
}
