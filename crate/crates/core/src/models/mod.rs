//! Classifier architectures: the reference ConvNet (conv→BN→relu→pool twice,
//! then a dense head) and an MLP fixture, both ending in softmax.
//!
//! A [`Network`] owns its parameters as gradient-tracked leaf tensors, so one
//! forward pass serves training (parameter gradients), attacks (input
//! gradients), and inference alike. Batch norm has two explicit modes:
//! training forwards use batch statistics and update the running moments;
//! everything else ([`Network::predict_proba`], attack paths) normalizes with
//! the stored running statistics so each sample's output is independent of
//! whatever batch it rides in.
//!
//! [`NetworkSnapshot`] is the plain-data mirror (no graph handles): it is
//! `Send + Sync`, feeds the checkpoint writer, and lets evaluation threads
//! each instantiate a private copy of a frozen model.

pub mod checkpoint;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture identity, stored in checkpoints and validated on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchDescriptor {
    Convnet {
        input: (usize, usize, usize),
        k: usize,
        channels: (usize, usize),
        kernel: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        k: usize,
    },
}

impl ArchDescriptor {
    pub fn num_classes(&self) -> usize {
        match self {
            ArchDescriptor::Convnet { k, .. } | ArchDescriptor::Mlp { k, .. } => *k,
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            ArchDescriptor::Convnet { input, .. } => *input,
            ArchDescriptor::Mlp { input_dim, .. } => (1, 1, *input_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        let (c, h, w) = self.input_shape();
        c * h * w
    }
}

const BN_MOMENTUM: f64 = 0.1;

pub enum Layer {
    Conv2d {
        w: Tensor,
        b: Tensor,
        stride: usize,
        pad: usize,
    },
    /// Running statistics live behind `RefCell` so only training-mode
    /// forwards (which are single-threaded by contract) mutate them while
    /// the eval path keeps `&self`.
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: RefCell<Vec<f64>>,
        running_var: RefCell<Vec<f64>>,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        w: Tensor,
        b: Tensor,
    },
    Softmax,
}

pub struct Network {
    arch: ArchDescriptor,
    layers: Vec<Layer>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("arch", &self.arch)
            .field("param_count", &self.param_count())
            .finish()
    }
}

/// Fan-in-scaled uniform init: U(−1/√fan_in, 1/√fan_in).
fn init_weights(rng: &mut ChaCha8Rng, numel: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..numel).map(|_| rng.gen_range(-a..a)).collect()
}

fn param(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(data, shape).tracked()
}

/// The reference ConvNet: conv(c1,5×5,pad 2) → BN → relu → pool(2) →
/// conv(c2,5×5,pad 2) → BN → relu → pool(2) → flatten → FC(K) → softmax,
/// with (c1, c2) = (16, 32). Spatial dims must be divisible by 4.
pub fn build_convnet(input_shape: (usize, usize, usize), k: usize, seed: u64) -> Network {
    let (cin, h, w) = input_shape;
    assert!(k >= 2, "need at least two classes");
    assert!(
        h % 4 == 0 && w % 4 == 0,
        "convnet pools twice; spatial dims must be divisible by 4, got {h}x{w}"
    );
    let (c1, c2, ks) = (16usize, 32usize, 5usize);
    let pad = ks / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let fan1 = cin * ks * ks;
    layers.push(Layer::Conv2d {
        w: param(init_weights(&mut rng, c1 * fan1, fan1), &[c1, cin, ks, ks]),
        b: param(vec![0.0; c1], &[c1]),
        stride: 1,
        pad,
    });
    layers.push(bn_layer(c1));
    layers.push(Layer::Relu);
    layers.push(Layer::MaxPool2);
    let fan2 = c1 * ks * ks;
    layers.push(Layer::Conv2d {
        w: param(init_weights(&mut rng, c2 * fan2, fan2), &[c2, c1, ks, ks]),
        b: param(vec![0.0; c2], &[c2]),
        stride: 1,
        pad,
    });
    layers.push(bn_layer(c2));
    layers.push(Layer::Relu);
    layers.push(Layer::MaxPool2);
    layers.push(Layer::Flatten);
    let dense_in = c2 * (h / 4) * (w / 4);
    layers.push(Layer::Dense {
        w: param(init_weights(&mut rng, dense_in * k, dense_in), &[dense_in, k]),
        b: param(vec![0.0; k], &[k]),
    });
    layers.push(Layer::Softmax);
    Network {
        arch: ArchDescriptor::Convnet {
            input: input_shape,
            k,
            channels: (c1, c2),
            kernel: ks,
        },
        layers,
    }
}

fn bn_layer(c: usize) -> Layer {
    Layer::BatchNorm {
        gamma: param(vec![1.0; c], &[c]),
        beta: param(vec![0.0; c], &[c]),
        running_mean: RefCell::new(vec![0.0; c]),
        running_var: RefCell::new(vec![1.0; c]),
    }
}

/// Dense/relu stack ending in FC(K) → softmax. `hidden = []` degenerates to
/// multinomial logistic regression.
pub fn build_mlp(input_dim: usize, hidden: &[usize], k: usize, seed: u64) -> Network {
    assert!(input_dim >= 1 && k >= 2, "need positive dims and K >= 2");
    assert!(hidden.iter().all(|&h| h >= 1), "hidden dims must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::Flatten];
    let mut d = input_dim;
    for &h in hidden {
        layers.push(Layer::Dense {
            w: param(init_weights(&mut rng, d * h, d), &[d, h]),
            b: param(vec![0.0; h], &[h]),
        });
        layers.push(Layer::Relu);
        d = h;
    }
    layers.push(Layer::Dense {
        w: param(init_weights(&mut rng, d * k, d), &[d, k]),
        b: param(vec![0.0; k], &[k]),
    });
    layers.push(Layer::Softmax);
    Network {
        arch: ArchDescriptor::Mlp { input_dim, hidden: hidden.to_vec(), k },
        layers,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

impl Network {
    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    /// Count of trainable parameters (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Trainable parameter handles, in layer order.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { w, b, .. } | Layer::Dense { w, b } => {
                    out.push(w.clone());
                    out.push(b.clone());
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma.clone());
                    out.push(beta.clone());
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable access for the optimizer: lets it replace parameter tensors.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d { w, b, .. } | Layer::Dense { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Run the first `upto` layers.
    fn forward_upto(&self, x: &Tensor, upto: usize, mode: Mode) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers[..upto] {
            cur = match layer {
                Layer::Conv2d { w, b, stride, pad } => cur.conv2d(w, b, *stride, *pad),
                Layer::BatchNorm { gamma, beta, running_mean, running_var } => match mode {
                    Mode::Train => {
                        let (y, mean, var) = cur.batch_norm_train(gamma, beta);
                        let mut rm = running_mean.borrow_mut();
                        let mut rv = running_var.borrow_mut();
                        for (r, m) in rm.iter_mut().zip(&mean) {
                            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                        }
                        for (r, v) in rv.iter_mut().zip(&var) {
                            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                        }
                        y
                    }
                    Mode::Eval => {
                        cur.batch_norm_eval(gamma, beta, &running_mean.borrow(), &running_var.borrow())
                    }
                },
                Layer::Relu => cur.relu(),
                Layer::MaxPool2 => cur.max_pool2(),
                Layer::Flatten => {
                    let b = cur.shape()[0];
                    let rest: usize = cur.shape()[1..].iter().product();
                    cur.reshape(&[b, rest])
                }
                Layer::Dense { w, b } => cur.matmul(w).add_bias(b),
                Layer::Softmax => cur.softmax(),
            };
        }
        cur
    }

    /// Training-mode forward: builds the gradient graph and updates BN
    /// running statistics. Input `(B, C, H, W)`.
    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.forward_upto(x, self.layers.len(), Mode::Train)
    }

    /// Inference-mode probabilities `(B, K)`; BN uses running statistics.
    /// Differentiable w.r.t. a tracked input (the attack path).
    pub fn predict_proba(&self, x: &Tensor) -> Tensor {
        self.forward_upto(x, self.layers.len(), Mode::Eval)
    }

    /// Inference-mode logits `(B, K)` — identical stack minus the trailing
    /// softmax (DeepFool and CW work on logits).
    pub fn logits(&self, x: &Tensor) -> Tensor {
        assert!(
            matches!(self.layers.last(), Some(Layer::Softmax)),
            "network must end in softmax"
        );
        self.forward_upto(x, self.layers.len() - 1, Mode::Eval)
    }

    /// Argmax class per row, ties to the lowest index.
    pub fn classify(&self, x: &Tensor) -> Vec<usize> {
        let p = self.predict_proba(x);
        let k = self.num_classes();
        p.data().chunks_exact(k).map(argmax).collect()
    }

    /// Single-sample convenience: class of one flat image.
    pub fn classify_one(&self, x: &[f64]) -> usize {
        let (c, h, w) = self.arch.input_shape();
        let t = Tensor::from_vec(x.to_vec(), &[1, c, h, w]);
        self.classify(&t)[0]
    }

    /// Single-sample probabilities as a plain vector.
    pub fn proba_one(&self, x: &[f64]) -> Vec<f64> {
        let (c, h, w) = self.arch.input_shape();
        let t = Tensor::from_vec(x.to_vec(), &[1, c, h, w]);
        self.predict_proba(&t).data().to_vec()
    }

    /// Plain-data copy of every parameter and running statistic.
    pub fn snapshot(&self) -> NetworkSnapshot {
        let mut entries = Vec::new();
        let mut conv_i = 0;
        let mut bn_i = 0;
        let mut dense_i = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv2d { w, b, .. } => {
                    conv_i += 1;
                    entries.push(entry(format!("conv{conv_i}.w"), w));
                    entries.push(entry(format!("conv{conv_i}.b"), b));
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var } => {
                    bn_i += 1;
                    entries.push(entry(format!("bn{bn_i}.gamma"), gamma));
                    entries.push(entry(format!("bn{bn_i}.beta"), beta));
                    let rm = running_mean.borrow();
                    entries.push(SnapshotEntry {
                        name: format!("bn{bn_i}.running_mean"),
                        shape: vec![rm.len()],
                        data: rm.clone(),
                    });
                    let rv = running_var.borrow();
                    entries.push(SnapshotEntry {
                        name: format!("bn{bn_i}.running_var"),
                        shape: vec![rv.len()],
                        data: rv.clone(),
                    });
                }
                Layer::Dense { w, b } => {
                    dense_i += 1;
                    entries.push(entry(format!("dense{dense_i}.w"), w));
                    entries.push(entry(format!("dense{dense_i}.b"), b));
                }
                _ => {}
            }
        }
        NetworkSnapshot { arch: self.arch.clone(), entries }
    }
}

fn entry(name: String, t: &Tensor) -> SnapshotEntry {
    SnapshotEntry { name, shape: t.shape().to_vec(), data: t.data().to_vec() }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One named array in a snapshot/checkpoint.
#[derive(Debug, Clone)]
pub struct SnapshotEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Graph-free mirror of a network: `Send + Sync`, hashable, serializable.
#[derive(Debug, Clone)]
pub struct NetworkSnapshot {
    pub arch: ArchDescriptor,
    pub entries: Vec<SnapshotEntry>,
}

impl NetworkSnapshot {
    /// Rebuild a live network. Validates that the entry names and shapes are
    /// exactly what the architecture descriptor dictates.
    pub fn instantiate(&self) -> Result<Network> {
        let mut net = match &self.arch {
            ArchDescriptor::Convnet { input, k, channels, kernel } => {
                if *channels != (16, 32) || *kernel != 5 {
                    return Err(Error::Checkpoint(format!(
                        "unsupported convnet variant: channels {channels:?}, kernel {kernel}"
                    )));
                }
                build_convnet(*input, *k, 0)
            }
            ArchDescriptor::Mlp { input_dim, hidden, k } => build_mlp(*input_dim, hidden, *k, 0),
        };
        let expected = net.snapshot();
        if expected.entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "architecture wants {} arrays, snapshot has {}",
                expected.entries.len(),
                self.entries.len()
            )));
        }
        for (want, got) in expected.entries.iter().zip(&self.entries) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "array mismatch: architecture wants {} {:?}, snapshot has {} {:?}",
                    want.name, want.shape, got.name, got.shape
                )));
            }
            if got.data.len() != got.shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "array {} length {} does not match shape {:?}",
                    got.name,
                    got.data.len(),
                    got.shape
                )));
            }
        }
        // Copy data in. Entry order matches layer traversal order.
        let mut it = self.entries.iter();
        for layer in &mut net.layers {
            match layer {
                Layer::Conv2d { w, b, .. } | Layer::Dense { w, b } => {
                    *w = param(it.next().unwrap().data.clone(), w.shape());
                    *b = param(it.next().unwrap().data.clone(), b.shape());
                }
                Layer::BatchNorm { gamma, beta, running_mean, running_var } => {
                    *gamma = param(it.next().unwrap().data.clone(), gamma.shape());
                    *beta = param(it.next().unwrap().data.clone(), beta.shape());
                    *running_mean = RefCell::new(it.next().unwrap().data.clone());
                    *running_var = RefCell::new(it.next().unwrap().data.clone());
                }
                _ => {}
            }
        }
        Ok(net)
    }

    /// Hex SHA-256 of the little-endian f64 concatenation of all entries —
    /// the checkpoint identity quoted in reports.
    pub fn weights_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for e in &self.entries {
            for v in &e.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convnet_param_count_is_the_derived_constant() {
        // 16·(25+1) + 32 + 32·(16·25+1) + 64 + (32·7·7·10 + 10) = 29034
        let net = build_convnet((1, 28, 28), 10, 1);
        assert_eq!(net.param_count(), 29034);
    }

    #[test]
    fn same_seed_same_params() {
        let a = build_convnet((1, 28, 28), 10, 7);
        let b = build_convnet((1, 28, 28), 10, 7);
        for (x, y) in a.parameters().iter().zip(b.parameters().iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn zero_image_gives_probability_vector() {
        let net = build_convnet((1, 28, 28), 10, 3);
        let x = Tensor::zeros(&[1, 1, 28, 28]);
        let p = net.predict_proba(&x);
        assert_eq!(p.shape(), &[1, 10]);
        let sum: f64 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mlp_empty_hidden_is_logistic_regression() {
        let net = build_mlp(4, &[], 3, 5);
        assert_eq!(net.param_count(), 4 * 3 + 3);
        let x = Tensor::zeros(&[2, 1, 1, 4]);
        let p = net.predict_proba(&x);
        assert_eq!(p.shape(), &[2, 3]);
    }

    #[test]
    fn zero_weight_mlp_outputs_uniform() {
        let mut net = build_mlp(4, &[], 5, 1);
        for p in net.parameters_mut() {
            *p = Tensor::zeros(p.shape()).tracked();
        }
        let x = Tensor::from_vec(vec![0.3, 0.9, 0.1, 0.5], &[1, 1, 1, 4]);
        let p = net.predict_proba(&x);
        for v in p.data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_duplicate_outputs() {
        // Also validates BN inference mode: the second batch member must not
        // influence the first row's output.
        let mut net = build_convnet((1, 8, 8), 3, 2);
        // Push some signal through BN running stats first.
        let warm = Tensor::from_vec(
            (0..2 * 64).map(|v| (v % 7) as f64 / 7.0).collect(),
            &[2, 1, 8, 8],
        );
        let _ = net.forward_train(&warm);
        let img: Vec<f64> = (0..64).map(|v| (v % 5) as f64 / 5.0).collect();
        let mut both = img.clone();
        both.extend(vec![1.0; 64]);
        let single = net.predict_proba(&Tensor::from_vec(img.clone(), &[1, 1, 8, 8]));
        let batch = net.predict_proba(&Tensor::from_vec(both, &[2, 1, 8, 8]));
        for j in 0..3 {
            assert_eq!(single.data()[j], batch.data()[j], "BN leaked batch state");
        }
    }

    #[test]
    fn classify_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
    }

    #[test]
    fn classify_invariant_under_monotone_logit_transform() {
        // Scaling the final dense layer (temperature) must not change argmax.
        let net = build_mlp(6, &[8], 4, 9);
        let x = Tensor::from_vec((0..12).map(|v| v as f64 / 12.0).collect(), &[2, 1, 1, 6]);
        let before = net.classify(&x);
        let mut scaled = net.snapshot();
        for e in scaled.entries.iter_mut() {
            if e.name.starts_with("dense2") {
                for v in e.data.iter_mut() {
                    *v *= 3.5;
                }
            }
        }
        let net2 = scaled.instantiate().unwrap();
        assert_eq!(before, net2.classify(&x));
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let mut net = build_convnet((1, 8, 8), 3, 4);
        let warm = Tensor::from_vec(vec![0.5; 2 * 64], &[2, 1, 8, 8]);
        let _ = net.forward_train(&warm); // move running stats off init
        let snap = net.snapshot();
        let net2 = snap.instantiate().unwrap();
        let x = Tensor::from_vec((0..64).map(|v| v as f64 / 64.0).collect(), &[1, 1, 8, 8]);
        assert_eq!(net.predict_proba(&x).data(), net2.predict_proba(&x).data());
        assert_eq!(snap.weights_hash(), net2.snapshot().weights_hash());
    }

    #[test]
    fn snapshot_shape_mismatch_rejected() {
        let net = build_mlp(4, &[], 3, 1);
        let mut snap = net.snapshot();
        snap.arch = ArchDescriptor::Mlp { input_dim: 4, hidden: vec![], k: 4 };
        assert!(matches!(snap.instantiate(), Err(Error::Checkpoint(_))));
    }
}
