//! Datasets and deterministic batching.
//!
//! A [`LabeledDataset`] is an immutable bundle of `(N, C, H, W)` images in
//! `[0,1]` plus class labels, shareable across threads (`Arc` inside).
//! Sources: IDX file pairs ([`idx::load_mnist_idx`]), Gaussian blobs for fast
//! tests ([`synth::synthetic_blobs`]), and the procedural stroke-digit set
//! ([`synth::synthetic_digits`]) used when no real MNIST files are available.

pub mod idx;
pub mod synth;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Immutable labeled image set. `images` is row-major `(N, C, H, W)`.
#[derive(Clone)]
pub struct LabeledDataset {
    images: Arc<Vec<f64>>,
    labels: Arc<Vec<usize>>,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
}

impl std::fmt::Debug for LabeledDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabeledDataset")
            .field("len", &self.len())
            .field("shape", &(self.channels, self.height, self.width))
            .field("num_classes", &self.num_classes)
            .finish()
    }
}


impl LabeledDataset {
    /// Validates the module invariants: pixel range, label range, and the
    /// image/label count agreement.
    pub fn new(
        images: Vec<f64>,
        labels: Vec<usize>,
        (channels, height, width): (usize, usize, usize),
        num_classes: usize,
    ) -> Result<Self> {
        let dim = channels * height * width;
        if dim == 0 {
            return Err(Error::Dataset("zero-sized image shape".into()));
        }
        if images.len() % dim != 0 {
            return Err(Error::Dataset(format!(
                "image buffer length {} is not a multiple of {}x{}x{}",
                images.len(),
                channels,
                height,
                width
            )));
        }
        let n = images.len() / dim;
        if n != labels.len() {
            return Err(Error::Dataset(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Dataset(format!("pixel {bad} outside [0,1]")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(LabeledDataset {
            images: Arc::new(images),
            labels: Arc::new(labels),
            channels,
            height,
            width,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(C, H, W)` of a single sample.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Single sample as a `(1, C, H, W)` tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        Tensor::from_vec(
            self.image(i).to_vec(),
            &[1, self.channels, self.height, self.width],
        )
    }

    /// Gather a batch `(indices.len(), C, H, W)` plus its labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(
                data,
                &[indices.len(), self.channels, self.height, self.width],
            ),
            labels,
        )
    }

    /// First `n` samples as a new dataset (cheap way to desk-scale a split).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let d = self.input_dim();
        LabeledDataset {
            images: Arc::new(self.images[..n * d].to_vec()),
            labels: Arc::new(self.labels[..n].to_vec()),
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
        }
    }
}

/// Deterministic shuffled batching: identical `(seed, epoch)` gives an
/// identical order; distinct epochs draw from distinct ChaCha streams.
#[derive(Debug, Clone, Copy)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
}

impl BatchPlan {
    /// The epoch's sample order.
    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

/// Shuffled mini-batches for one epoch; the final partial batch is emitted.
pub fn batches<'a>(
    dataset: &'a LabeledDataset,
    plan: &BatchPlan,
) -> impl Iterator<Item = (Tensor, Vec<usize>)> + 'a {
    assert!(plan.batch_size >= 1, "batch size must be >= 1");
    assert!(
        plan.batch_size <= dataset.len(),
        "batch size {} exceeds dataset size {}",
        plan.batch_size,
        dataset.len()
    );
    let order = plan.order(dataset.len());
    let bs = plan.batch_size;
    (0..order.len().div_ceil(bs)).map(move |b| {
        let chunk = &order[b * bs..((b + 1) * bs).min(order.len())];
        dataset.batch(chunk)
    })
}
