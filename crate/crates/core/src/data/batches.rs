use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::tensor::Tensor;

/// Shuffled mini-batches for one epoch. The order is a pure function of `(seed, epoch)`.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> BatchIter<'_> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    BatchIter { dataset, order, batch_size, pos: 0 }
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let images = self.dataset.images.gather_rows(idx);
        let labels = idx.iter().map(|&i| self.dataset.labels[i]).collect();
        Some((images, labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn toy(n: usize) -> Dataset {
        Dataset {
            images: Tensor::from_vec(&[n, 1, 1, 1], (0..n).map(|i| i as f32).collect()).unwrap(),
            labels: (0..n).map(|i| i % 3).collect(),
            split: Split::Train,
            class_count: 3,
        }
    }

    #[test]
    fn sizes_include_short_tail() {
        let ds = toy(10);
        let sizes: Vec<usize> = batches(&ds, 4, 1, 0).map(|(x, _)| x.rows()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_and_epoch_same_order() {
        let ds = toy(50);
        let a: Vec<_> = batches(&ds, 7, 3, 2).collect();
        let b: Vec<_> = batches(&ds, 7, 3, 2).collect();
        assert_eq!(a, b);
        let c: Vec<_> = batches(&ds, 7, 3, 3).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn every_sample_exactly_once() {
        let ds = toy(37);
        let mut seen: Vec<usize> = batches(&ds, 5, 9, 4)
            .flat_map(|(x, _)| x.into_data().into_iter().map(|v| v as usize))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        let mut labels: Vec<usize> = batches(&ds, 5, 9, 4).flat_map(|(_, l)| l).collect();
        labels.sort_unstable();
        let mut want = ds.labels.clone();
        want.sort_unstable();
        assert_eq!(labels, want);
    }
}
