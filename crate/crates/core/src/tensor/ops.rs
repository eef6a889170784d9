//! Differentiable primitives and their reverse rules.
//!
//! Each constructor validates shapes eagerly (panicking with the offending
//! shapes — malformed graphs are programming errors, not runtime conditions)
//! and records an [`Op`] carrying its input handles plus whatever forward-pass
//! values the reverse rule needs (pooling argmaxes, batch-norm inverse
//! standard deviations, and so on).

use super::{GradSink, Tensor, CLAMP_MIN};

const BN_EPS: f64 = 1e-5;

pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    AddBias(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Neg(Tensor),
    Recip(Tensor),
    Log(Tensor),
    Exp(Tensor),
    Relu(Tensor),
    Tanh(Tensor),
    Matmul(Tensor, Tensor),
    Conv2d {
        x: Tensor,
        w: Tensor,
        b: Tensor,
        stride: usize,
        pad: usize,
    },
    BatchNormTrain {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MaxPool2 {
        x: Tensor,
        argmax: Vec<usize>,
    },
    Softmax(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Reshape(Tensor),
    SliceRows {
        x: Tensor,
        start: usize,
    },
    SelectFlat {
        x: Tensor,
        index: usize,
    },
    GatherClass {
        x: Tensor,
        classes: Vec<usize>,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Neg(a)
            | Op::Recip(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![a],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::BatchNormTrain { x, gamma, beta, .. }
            | Op::BatchNormEval { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::MaxPool2 { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SelectFlat { x, .. }
            | Op::GatherClass { x, .. } => vec![x],
        }
    }
}

/// `(channels, spatial)` split used by batch norm: rank-4 tensors normalize
/// per channel over batch × spatial, rank-2 per feature over batch.
fn bn_layout(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        4 => (shape[1], shape[2] * shape[3]),
        2 => (shape[1], 1),
        _ => panic!("batch_norm expects rank-2 or rank-4 input, got {shape:?}"),
    }
}

impl Tensor {
    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.shape(),
            other.shape(),
            "add shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.add(&other.neg())
    }

    /// Broadcast-add a rank-1 bias over the last axis.
    pub fn add_bias(&self, bias: &Tensor) -> Tensor {
        let k = *self.shape().last().expect("add_bias on scalar");
        assert_eq!(
            bias.shape(),
            &[k],
            "bias shape {:?} does not match last axis {} of {:?}",
            bias.shape(),
            k,
            self.shape()
        );
        let bv = bias.data();
        let data = self
            .data()
            .chunks_exact(k)
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            Op::AddBias(self.clone(), bias.clone()),
        )
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.shape(),
            other.shape(),
            "mul shape mismatch: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Mul(self.clone(), other.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|a| a * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Scale(self.clone(), c))
    }

    pub fn neg(&self) -> Tensor {
        let data = self.data().iter().map(|a| -a).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Neg(self.clone()))
    }

    /// Elementwise `1/max(x, CLAMP_MIN)`. Probability-space reciprocal: the
    /// clamp keeps saturated softmax outputs finite, and the derivative is 0
    /// in the clamped region.
    pub fn recip(&self) -> Tensor {
        let data = self.data().iter().map(|&a| 1.0 / a.max(CLAMP_MIN)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Recip(self.clone()))
    }

    /// Elementwise `ln(max(x, CLAMP_MIN))`; same clamp policy as [`recip`].
    pub fn ln(&self) -> Tensor {
        let data = self.data().iter().map(|&a| a.max(CLAMP_MIN).ln()).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Log(self.clone()))
    }

    pub fn exp(&self) -> Tensor {
        let data = self.data().iter().map(|a| a.exp()).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Exp(self.clone()))
    }

    /// `max(0, x)`, derivative 0 at the kink.
    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|a| a.max(0.0)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Relu(self.clone()))
    }

    pub fn tanh(&self) -> Tensor {
        let data = self.data().iter().map(|a| a.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Tanh(self.clone()))
    }

    /// Rank-2 matrix product `(m,k) × (k,n) → (m,n)`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (a, b) = (self.shape(), other.shape());
        assert!(
            a.len() == 2 && b.len() == 2 && a[1] == b[0],
            "matmul shape mismatch: {a:?} × {b:?}"
        );
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Tensor::from_op(data, vec![m, n], Op::Matmul(self.clone(), other.clone()))
    }

    /// 2-D cross-correlation over NCHW input with NCHW weights
    /// `(c_out, c_in, kh, kw)` and per-output-channel bias.
    pub fn conv2d(&self, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let xs = self.shape();
        let ws = w.shape();
        assert!(
            xs.len() == 4 && ws.len() == 4,
            "conv2d wants rank-4 input/weights, got {xs:?} and {ws:?}"
        );
        let (bsz, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weights {wcin}");
        assert_eq!(b.shape(), &[cout], "conv2d bias shape {:?}", b.shape());
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            wd + 2 * pad
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; bsz * cout * ho * wo];
        conv2d_forward(
            self.data(),
            w.data(),
            b.data(),
            &mut out,
            ConvDims { bsz, cin, h, w: wd, cout, kh, kw, ho, wo, stride, pad },
        );
        Tensor::from_op(
            out,
            vec![bsz, cout, ho, wo],
            Op::Conv2d { x: self.clone(), w: w.clone(), b: b.clone(), stride, pad },
        )
    }

    /// Training-mode batch norm. Normalizes with the batch statistics and
    /// returns `(output, batch_mean, batch_var)` so the caller can fold the
    /// batch moments into its running estimates (biased variance, as used for
    /// normalization itself).
    pub fn batch_norm_train(&self, gamma: &Tensor, beta: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let (c, s) = bn_layout(self.shape());
        let bsz = self.shape()[0];
        assert_eq!(gamma.shape(), &[c], "gamma shape {:?}", gamma.shape());
        assert_eq!(beta.shape(), &[c], "beta shape {:?}", beta.shape());
        let m = (bsz * s) as f64;
        assert!(bsz * s > 0, "batch_norm on empty batch");
        let x = self.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let mut acc = 0.0;
                for v in &x[base..base + s] {
                    acc += v;
                }
                mean[ci] += acc;
            }
        }
        for mv in mean.iter_mut() {
            *mv /= m;
        }
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let mu = mean[ci];
                let mut acc = 0.0;
                for v in &x[base..base + s] {
                    let d = v - mu;
                    acc += d * d;
                }
                var[ci] += acc;
            }
        }
        for vv in var.iter_mut() {
            *vv /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let (gv, bv) = (gamma.data(), beta.data());
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let (mu, is, g, be) = (mean[ci], inv_std[ci], gv[ci], bv[ci]);
                for j in base..base + s {
                    let xh = (x[j] - mu) * is;
                    x_hat[j] = xh;
                    out[j] = g * xh + be;
                }
            }
        }
        let t = Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::BatchNormTrain {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                x_hat,
                inv_std: inv_std.clone(),
            },
        );
        (t, mean, var)
    }

    /// Inference-mode batch norm: normalizes with the provided running
    /// moments, so each sample's output is independent of its batch.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Tensor {
        let (c, s) = bn_layout(self.shape());
        let bsz = self.shape()[0];
        assert_eq!(gamma.shape(), &[c], "gamma shape {:?}", gamma.shape());
        assert_eq!(beta.shape(), &[c], "beta shape {:?}", beta.shape());
        assert_eq!(running_mean.len(), c, "running_mean length");
        assert_eq!(running_var.len(), c, "running_var length");
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        let (gv, bv) = (gamma.data(), beta.data());
        for bi in 0..bsz {
            for ci in 0..c {
                let base = (bi * c + ci) * s;
                let (mu, is, g, be) = (running_mean[ci], inv_std[ci], gv[ci], bv[ci]);
                for j in base..base + s {
                    out[j] = g * (x[j] - mu) * is + be;
                }
            }
        }
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::BatchNormEval {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                mean: running_mean.to_vec(),
                inv_std,
            },
        )
    }

    /// 2×2 max pooling with stride 2 over NCHW input; H and W must be even.
    /// Ties keep the first maximum in scan order.
    pub fn max_pool2(&self) -> Tensor {
        let xs = self.shape();
        assert_eq!(xs.len(), 4, "max_pool2 wants rank-4 input, got {xs:?}");
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "max_pool2 wants even spatial dims, got {h}x{w}"
        );
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; bsz * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..bsz * c {
            let xbase = p * h * w;
            let obase = p * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i00 = xbase + (2 * oy) * w + 2 * ox;
                    let cand = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = cand[0];
                    for &i in &cand[1..] {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    let o = obase + oy * wo + ox;
                    out[o] = x[best];
                    argmax[o] = best;
                }
            }
        }
        Tensor::from_op(
            out,
            vec![bsz, c, ho, wo],
            Op::MaxPool2 { x: self.clone(), argmax },
        )
    }

    /// Numerically-stable softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let k = *self.shape().last().expect("softmax on scalar");
        assert!(k > 0, "softmax over empty axis");
        let mut data = self.data().to_vec();
        for row in data.chunks_exact_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Tensor::from_op(data, self.shape().to_vec(), Op::Softmax(self.clone()))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![s], vec![], Op::Sum(self.clone()))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Tensor {
        assert!(self.numel() > 0, "mean of empty tensor");
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![s / self.numel() as f64],
            vec![],
            Op::Mean(self.clone()),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape {:?} -> {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        )
    }

    /// Contiguous slice `[start, start+len)` along axis 0.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor {
        let xs = self.shape();
        assert!(!xs.is_empty(), "slice_rows on scalar");
        assert!(
            start + len <= xs[0],
            "slice_rows [{start}, {}) out of axis-0 bound {}",
            start + len,
            xs[0]
        );
        let row: usize = xs[1..].iter().product();
        let data = self.data()[start * row..(start + len) * row].to_vec();
        let mut shape = xs.to_vec();
        shape[0] = len;
        Tensor::from_op(data, shape, Op::SliceRows { x: self.clone(), start })
    }

    /// Single element by flat index, as a scalar.
    pub fn select_flat(&self, index: usize) -> Tensor {
        assert!(
            index < self.numel(),
            "select_flat index {index} out of {} elements",
            self.numel()
        );
        Tensor::from_op(
            vec![self.data()[index]],
            vec![],
            Op::SelectFlat { x: self.clone(), index },
        )
    }

    /// Per-row class pick: `(B, K) → (B,)` with `out[b] = x[b, classes[b]]`.
    pub fn gather_class(&self, classes: &[usize]) -> Tensor {
        let xs = self.shape();
        assert_eq!(xs.len(), 2, "gather_class wants rank-2 input, got {xs:?}");
        let (bsz, k) = (xs[0], xs[1]);
        assert_eq!(classes.len(), bsz, "gather_class wants one class per row");
        let x = self.data();
        let data = classes
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                assert!(c < k, "class {c} out of range {k}");
                x[b * k + c]
            })
            .collect();
        Tensor::from_op(
            data,
            vec![bsz],
            Op::GatherClass { x: self.clone(), classes: classes.to_vec() },
        )
    }
}

struct ConvDims {
    bsz: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

/// Valid output-column window for a given kernel column at stride 1:
/// returns `(ox_lo, ox_hi, ix0)` with `ix = ox + kx - pad` staying in `[0, w)`.
fn stride1_window(kx: usize, pad: usize, w: usize, wo: usize) -> Option<(usize, usize, usize)> {
    let ox_lo = pad.saturating_sub(kx);
    let ox_hi = (w + pad).saturating_sub(kx).min(wo);
    if ox_lo >= ox_hi {
        return None;
    }
    Some((ox_lo, ox_hi, ox_lo + kx - pad))
}

fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64], d: ConvDims) {
    for bi in 0..d.bsz {
        for co in 0..d.cout {
            let obase = (bi * d.cout + co) * d.ho * d.wo;
            out[obase..obase + d.ho * d.wo].fill(b[co]);
            for ci in 0..d.cin {
                let xbase = (bi * d.cin + ci) * d.h * d.w;
                let kbase = (co * d.cin + ci) * d.kh * d.kw;
                if d.stride == 1 {
                    for oy in 0..d.ho {
                        let orow = obase + oy * d.wo;
                        for ky in 0..d.kh {
                            let iy = oy as isize + ky as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * d.w;
                            for kx in 0..d.kw {
                                let Some((lo, hi, ix0)) = stride1_window(kx, d.pad, d.w, d.wo)
                                else {
                                    continue;
                                };
                                let kv = w[kbase + ky * d.kw + kx];
                                let src = &x[xrow + ix0..xrow + ix0 + (hi - lo)];
                                let dst = &mut out[orow + lo..orow + hi];
                                for (o, v) in dst.iter_mut().zip(src) {
                                    *o += kv * v;
                                }
                            }
                        }
                    }
                } else {
                    for oy in 0..d.ho {
                        for ox in 0..d.wo {
                            let mut acc = 0.0;
                            for ky in 0..d.kh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    acc += w[kbase + ky * d.kw + kx]
                                        * x[xbase + iy as usize * d.w + ix as usize];
                                }
                            }
                            out[obase + oy * d.wo + ox] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
    d: ConvDims,
) {
    for bi in 0..d.bsz {
        for co in 0..d.cout {
            let obase = (bi * d.cout + co) * d.ho * d.wo;
            let mut bacc = 0.0;
            for v in &g[obase..obase + d.ho * d.wo] {
                bacc += v;
            }
            db[co] += bacc;
            for ci in 0..d.cin {
                let xbase = (bi * d.cin + ci) * d.h * d.w;
                let kbase = (co * d.cin + ci) * d.kh * d.kw;
                if d.stride == 1 {
                    for oy in 0..d.ho {
                        let orow = obase + oy * d.wo;
                        for ky in 0..d.kh {
                            let iy = oy as isize + ky as isize - d.pad as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * d.w;
                            for kx in 0..d.kw {
                                let Some((lo, hi, ix0)) = stride1_window(kx, d.pad, d.w, d.wo)
                                else {
                                    continue;
                                };
                                let n = hi - lo;
                                let kv = w[kbase + ky * d.kw + kx];
                                let gsrc = &g[orow + lo..orow + hi];
                                // dx: scatter kv * g back over the input row
                                let xdst = &mut dx[xrow + ix0..xrow + ix0 + n];
                                for (o, v) in xdst.iter_mut().zip(gsrc) {
                                    *o += kv * v;
                                }
                                // dw: correlate input row with output row
                                let xsrc = &x[xrow + ix0..xrow + ix0 + n];
                                let mut acc = 0.0;
                                for (a, b) in xsrc.iter().zip(gsrc) {
                                    acc += a * b;
                                }
                                dw[kbase + ky * d.kw + kx] += acc;
                            }
                        }
                    }
                } else {
                    for oy in 0..d.ho {
                        for ox in 0..d.wo {
                            let gv = g[obase + oy * d.wo + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            for ky in 0..d.kh {
                                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    let xi = xbase + iy as usize * d.w + ix as usize;
                                    dx[xi] += w[kbase + ky * d.kw + kx] * gv;
                                    dw[kbase + ky * d.kw + kx] += x[xi] * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `aᵀ·b` for `(m,k)ᵀ × (m,n) → (k,n)`.
fn matmul_at_b(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `a·bᵀ` for `(m,k) × (n,k)ᵀ → (m,n)`.
fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Distribute `g` (the gradient of the loss w.r.t. `node`'s output) onto
/// `node`'s inputs according to its reverse rule.
pub(crate) fn backward_step(node: &Tensor, g: &[f64], sink: &mut GradSink) {
    match &node.inner.op {
        Op::Leaf => unreachable!("leaf reached backward_step"),
        Op::Add(a, b) => {
            sink.add(a, g.to_vec());
            sink.add(b, g.to_vec());
        }
        Op::AddBias(a, b) => {
            let k = b.numel();
            let mut db = vec![0.0; k];
            for row in g.chunks_exact(k) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            sink.add(a, g.to_vec());
            sink.add(b, db);
        }
        Op::Mul(a, b) => {
            let da = g.iter().zip(b.data()).map(|(gv, bv)| gv * bv).collect();
            let db = g.iter().zip(a.data()).map(|(gv, av)| gv * av).collect();
            sink.add(a, da);
            sink.add(b, db);
        }
        Op::Scale(a, c) => {
            sink.add(a, g.iter().map(|gv| gv * c).collect());
        }
        Op::Neg(a) => {
            sink.add(a, g.iter().map(|gv| -gv).collect());
        }
        Op::Recip(a) => {
            let da = g
                .iter()
                .zip(a.data())
                .map(|(gv, &xv)| if xv >= CLAMP_MIN { -gv / (xv * xv) } else { 0.0 })
                .collect();
            sink.add(a, da);
        }
        Op::Log(a) => {
            let da = g
                .iter()
                .zip(a.data())
                .map(|(gv, &xv)| if xv >= CLAMP_MIN { gv / xv } else { 0.0 })
                .collect();
            sink.add(a, da);
        }
        Op::Exp(a) => {
            let da = g.iter().zip(node.data()).map(|(gv, yv)| gv * yv).collect();
            sink.add(a, da);
        }
        Op::Relu(a) => {
            let da = g
                .iter()
                .zip(a.data())
                .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                .collect();
            sink.add(a, da);
        }
        Op::Tanh(a) => {
            let da = g
                .iter()
                .zip(node.data())
                .map(|(gv, yv)| gv * (1.0 - yv * yv))
                .collect();
            sink.add(a, da);
        }
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            sink.add(a, matmul_a_bt(g, b.data(), m, n, k));
            sink.add(b, matmul_at_b(a.data(), g, m, k, n));
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let xs = x.shape();
            let ws = w.shape();
            let os = node.shape();
            let dims = ConvDims {
                bsz: xs[0],
                cin: xs[1],
                h: xs[2],
                w: xs[3],
                cout: ws[0],
                kh: ws[2],
                kw: ws[3],
                ho: os[2],
                wo: os[3],
                stride: *stride,
                pad: *pad,
            };
            let mut dx = vec![0.0; x.numel()];
            let mut dw = vec![0.0; w.numel()];
            let mut db = vec![0.0; b.numel()];
            conv2d_backward(x.data(), w.data(), g, &mut dx, &mut dw, &mut db, dims);
            sink.add(x, dx);
            sink.add(w, dw);
            sink.add(b, db);
        }
        Op::BatchNormTrain { x, gamma, beta, x_hat, inv_std } => {
            let (c, s) = bn_layout(x.shape());
            let bsz = x.shape()[0];
            let m = (bsz * s) as f64;
            let gv = gamma.data();
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for bi in 0..bsz {
                for ci in 0..c {
                    let base = (bi * c + ci) * s;
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for j in base..base + s {
                        dg += g[j] * x_hat[j];
                        db += g[j];
                    }
                    dgamma[ci] += dg;
                    dbeta[ci] += db;
                }
            }
            let mut dx = vec![0.0; x.numel()];
            for bi in 0..bsz {
                for ci in 0..c {
                    let base = (bi * c + ci) * s;
                    let coef = gv[ci] * inv_std[ci] / m;
                    let (sg, sgx) = (dbeta[ci], dgamma[ci]);
                    for j in base..base + s {
                        dx[j] = coef * (m * g[j] - sg - x_hat[j] * sgx);
                    }
                }
            }
            sink.add(x, dx);
            sink.add(gamma, dgamma);
            sink.add(beta, dbeta);
        }
        Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
            let (c, s) = bn_layout(x.shape());
            let bsz = x.shape()[0];
            let gv = gamma.data();
            let xv = x.data();
            let mut dx = vec![0.0; x.numel()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for bi in 0..bsz {
                for ci in 0..c {
                    let base = (bi * c + ci) * s;
                    let (mu, is) = (mean[ci], inv_std[ci]);
                    let coef = gv[ci] * is;
                    let mut dg = 0.0;
                    let mut db = 0.0;
                    for j in base..base + s {
                        dx[j] = g[j] * coef;
                        dg += g[j] * (xv[j] - mu) * is;
                        db += g[j];
                    }
                    dgamma[ci] += dg;
                    dbeta[ci] += db;
                }
            }
            sink.add(x, dx);
            sink.add(gamma, dgamma);
            sink.add(beta, dbeta);
        }
        Op::MaxPool2 { x, argmax } => {
            let mut dx = vec![0.0; x.numel()];
            for (o, &i) in argmax.iter().enumerate() {
                dx[i] += g[o];
            }
            sink.add(x, dx);
        }
        Op::Softmax(a) => {
            let k = *node.shape().last().unwrap();
            let y = node.data();
            let mut dz = vec![0.0; y.len()];
            for r in 0..y.len() / k {
                let (ys, gs) = (&y[r * k..(r + 1) * k], &g[r * k..(r + 1) * k]);
                let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                for j in 0..k {
                    dz[r * k + j] = ys[j] * (gs[j] - dot);
                }
            }
            sink.add(a, dz);
        }
        Op::Sum(a) => {
            sink.add(a, vec![g[0]; a.numel()]);
        }
        Op::Mean(a) => {
            let c = g[0] / a.numel() as f64;
            sink.add(a, vec![c; a.numel()]);
        }
        Op::Reshape(a) => {
            sink.add(a, g.to_vec());
        }
        Op::SliceRows { x, start } => {
            let row: usize = x.shape()[1..].iter().product();
            let mut dx = vec![0.0; x.numel()];
            dx[start * row..start * row + g.len()].copy_from_slice(g);
            sink.add(x, dx);
        }
        Op::SelectFlat { x, index } => {
            let mut dx = vec![0.0; x.numel()];
            dx[*index] = g[0];
            sink.add(x, dx);
        }
        Op::GatherClass { x, classes } => {
            let k = x.shape()[1];
            let mut dx = vec![0.0; x.numel()];
            for (b, &c) in classes.iter().enumerate() {
                dx[b * k + c] = g[b];
            }
            sink.add(x, dx);
        }
    }
}
