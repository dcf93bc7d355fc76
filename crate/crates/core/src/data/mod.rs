//! Datasets: MNIST IDX and CIFAR-10 binary loaders, augmentation, batching.

mod augment;
mod batches;
mod cifar;
mod mnist;

pub use augment::{augment, Augmentation};
pub use batches::{batches, BatchIter};
pub use cifar::load_cifar10;
pub use mnist::load_mnist_idx;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel standardization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn mnist() -> Self {
        Normalization { mean: vec![0.1307], std: vec![0.3081] }
    }

    pub fn cifar10() -> Self {
        Normalization {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }

    /// Maps raw bytes of one channel-planar image into standardized floats.
    pub(crate) fn apply(&self, pixels: &[u8], channels: usize, out: &mut Vec<f32>) {
        let plane = pixels.len() / channels;
        for (c, chunk) in pixels.chunks_exact(plane).enumerate() {
            let (m, s) = (self.mean[c], self.std[c]);
            out.extend(chunk.iter().map(|&p| (p as f32 / 255.0 - m) / s));
        }
    }
}

/// Labelled images `[N, ch, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `[ch, h, w]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// The first `n` samples (all of them when `n` is 0 or at least the size).
    pub fn head(&self, n: usize) -> Dataset {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            images: self.images.gather_rows(&idx),
            labels: self.labels[..n].to_vec(),
            split: self.split,
            class_count: self.class_count,
        }
    }

    /// Splits off the last `fraction` of samples as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> (Dataset, Dataset) {
        let held = ((self.len() as f64) * fraction).round() as usize;
        let cut = self.len() - held.min(self.len());
        let front: Vec<usize> = (0..cut).collect();
        let back: Vec<usize> = (cut..self.len()).collect();
        let part = |idx: &[usize], split| Dataset {
            images: self.images.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split,
            class_count: self.class_count,
        };
        (part(&front, self.split), part(&back, Split::Test))
    }
}
