//! Online one-way ANOVA F-statistics over per-sample feature matrices.
//!
//! A [`ScreeningAccumulator`] keeps, per feature, the sample count of every
//! class, the overall sum, and per-class sums and sums of squares. These are
//! enough to recover both the between-class and the within-class variance
//! once the epoch is over, so memory is `O(classes * features)` regardless of
//! how many samples were seen:
//!
//! ```text
//! between_j = sum_c n_c (mean_cj - mean_j)^2 / (C - 1)
//! within_j  = sum_c (SS_cj - 2 mean_cj S_cj + n_c mean_cj^2) / (N - C)
//! F_j       = between_j / within_j
//! ```

use std::io::Write;

use crate::error::{Error, Result};
use crate::nn::Dense;
use crate::tensor::Tensor;

/// A within-class sum of squares below this fraction of the feature's raw sum
/// of squares is treated as zero; `SS - 2 mean S + n mean^2` cancels badly.
const WITHIN_RTOL: f64 = 1e-10;

/// Same for the between-class sum, which is built from mean differences and
/// carries far less rounding noise.
const BETWEEN_RTOL: f64 = 1e-20;

/// Streaming sufficient statistics for per-feature F-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningAccumulator {
    class_count: usize,
    feature_count: usize,
    samples: u64,
    class_samples: Vec<u64>,
    sum: Vec<f64>,
    /// `[class][feature]`
    class_sum: Vec<f64>,
    /// `[class][feature]`
    class_sq_sum: Vec<f64>,
}

/// How a feature's F-score was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    Normal,
    /// Constant feature: no between- or within-class spread.
    ZeroVariance,
    /// Perfectly separating feature: spread between classes only.
    ZeroWithinVariance,
}

/// Finalized F-scores, one per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FScores {
    pub values: Vec<f64>,
    pub flags: Vec<Degeneracy>,
}

impl FScores {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes a `feature_index f_score` table, one feature per line.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "feature_index\tf_score")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i}\t{v:.9e}")?;
        }
        Ok(())
    }
}

impl ScreeningAccumulator {
    pub fn new(class_count: usize, feature_count: usize) -> Result<Self> {
        if class_count == 0 || feature_count == 0 {
            return Err(Error::invalid("class and feature counts must be at least 1"));
        }
        Ok(ScreeningAccumulator {
            class_count,
            feature_count,
            samples: 0,
            class_samples: vec![0; class_count],
            sum: vec![0.0; feature_count],
            class_sum: vec![0.0; class_count * feature_count],
            class_sq_sum: vec![0.0; class_count * feature_count],
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn class_samples(&self) -> &[u64] {
        &self.class_samples
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn class_sum(&self, class: usize) -> &[f64] {
        &self.class_sum[class * self.feature_count..(class + 1) * self.feature_count]
    }

    pub fn class_sq_sum(&self, class: usize) -> &[f64] {
        &self.class_sq_sum[class * self.feature_count..(class + 1) * self.feature_count]
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        match labels.iter().find(|&&l| l >= self.class_count) {
            Some(bad) => Err(Error::invalid(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            ))),
            None => Ok(()),
        }
    }

    /// Adds a batch of feature rows `[k, p]` with their class labels.
    pub fn update(&mut self, features: &Tensor, labels: &[usize]) -> Result<()> {
        let k = features.rows();
        if k == 0 && labels.is_empty() {
            return Ok(());
        }
        if features.row_len() != self.feature_count {
            return Err(Error::shape(format!(
                "feature width {} but accumulator has {} features",
                features.row_len(),
                self.feature_count
            )));
        }
        if labels.len() != k {
            return Err(Error::shape(format!("{} labels for {k} feature rows", labels.len())));
        }
        self.check_labels(labels)?;
        let p = self.feature_count;
        for (s, &c) in labels.iter().enumerate() {
            let row = features.row(s);
            let cs = &mut self.class_sum[c * p..(c + 1) * p];
            let cq = &mut self.class_sq_sum[c * p..(c + 1) * p];
            for (j, &v) in row.iter().enumerate() {
                let v = v as f64;
                self.sum[j] += v;
                cs[j] += v;
                cq[j] += v * v;
            }
            self.class_samples[c] += 1;
        }
        self.samples += k as u64;
        Ok(())
    }

    /// Same effect as `update(&weight_features(layer, input)?, labels)` without
    /// materializing the `[k, out * in]` feature matrix.
    ///
    /// Within one batch every connection feature is `x_i * w_oi` with a fixed
    /// weight, so per-class input moments times `w` and `w^2` give the sums.
    pub fn update_dense_connections(&mut self, layer: &Dense, input: &Tensor, labels: &[usize]) -> Result<()> {
        let (out, inp) = (layer.out_features(), layer.in_features());
        if out * inp != self.feature_count {
            return Err(Error::shape(format!(
                "layer has {} connections but accumulator has {} features",
                out * inp,
                self.feature_count
            )));
        }
        if input.row_len() != inp {
            return Err(Error::shape(format!("layer input width {} != {inp}", input.row_len())));
        }
        if labels.len() != input.rows() {
            return Err(Error::shape(format!("{} labels for {} rows", labels.len(), input.rows())));
        }
        self.check_labels(labels)?;
        let c_n = self.class_count;
        let mut counts = vec![0u64; c_n];
        let mut xs = vec![0.0f64; c_n * inp];
        let mut xxs = vec![0.0f64; c_n * inp];
        for (s, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (i, &v) in input.row(s).iter().enumerate() {
                let v = v as f64;
                xs[c * inp + i] += v;
                xxs[c * inp + i] += v * v;
            }
        }
        let w: Vec<f64> = layer
            .weights
            .data()
            .iter()
            .zip(layer.weight_mask.data())
            .map(|(&w, &m)| (w * m) as f64)
            .collect();
        let p = self.feature_count;
        for c in 0..c_n {
            if counts[c] == 0 {
                continue;
            }
            let cs = &mut self.class_sum[c * p..(c + 1) * p];
            let cq = &mut self.class_sq_sum[c * p..(c + 1) * p];
            let sx = &xs[c * inp..(c + 1) * inp];
            let sxx = &xxs[c * inp..(c + 1) * inp];
            for o in 0..out {
                let base = o * inp;
                for i in 0..inp {
                    let wv = w[base + i];
                    let add = wv * sx[i];
                    cs[base + i] += add;
                    cq[base + i] += wv * wv * sxx[i];
                    self.sum[base + i] += add;
                }
            }
            self.class_samples[c] += counts[c];
        }
        self.samples += labels.len() as u64;
        Ok(())
    }

    /// Folds another accumulator over disjoint samples into this one.
    pub fn merge(&mut self, other: &ScreeningAccumulator) -> Result<()> {
        if other.class_count != self.class_count || other.feature_count != self.feature_count {
            return Err(Error::shape("cannot merge accumulators of different dimensions"));
        }
        self.samples += other.samples;
        for (a, b) in self.class_samples.iter_mut().zip(&other.class_samples) {
            *a += b;
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.class_sum.iter_mut().zip(&other.class_sum) {
            *a += b;
        }
        for (a, b) in self.class_sq_sum.iter_mut().zip(&other.class_sq_sum) {
            *a += b;
        }
        Ok(())
    }

    /// Clears all statistics, keeping the dimensions.
    pub fn reset(&mut self) {
        self.samples = 0;
        self.class_samples.fill(0);
        self.sum.fill(0.0);
        self.class_sum.fill(0.0);
        self.class_sq_sum.fill(0.0);
    }

    /// Computes per-feature F-scores from the accumulated sums.
    ///
    /// Constant features score 0. Features with between-class spread but no
    /// within-class spread get the largest finite score of the other features
    /// (1.0 when there is none), so every value is finite and non-negative.
    pub fn finalize(&self) -> Result<FScores> {
        let (c_n, n) = (self.class_count, self.samples);
        if n <= c_n as u64 {
            return Err(Error::invalid(format!(
                "{n} samples for {c_n} classes: the within-class divisor N - C must be positive"
            )));
        }
        if self.class_samples.iter().filter(|&&k| k > 0).count() < 2 {
            return Err(Error::invalid("F-scores need samples from at least two classes"));
        }
        let p = self.feature_count;
        let df_between = (c_n - 1) as f64;
        let df_within = (n as usize - c_n) as f64;
        let mut values = vec![0.0f64; p];
        let mut flags = vec![Degeneracy::Normal; p];
        for j in 0..p {
            let grand_mean = self.sum[j] / n as f64;
            let (mut between, mut within, mut total_sq) = (0.0f64, 0.0f64, 0.0f64);
            for c in 0..c_n {
                let nc = self.class_samples[c];
                if nc == 0 {
                    continue;
                }
                let s = self.class_sum[c * p + j];
                let ss = self.class_sq_sum[c * p + j];
                let mean = s / nc as f64;
                between += nc as f64 * (mean - grand_mean) * (mean - grand_mean);
                within += ss - 2.0 * mean * s + nc as f64 * mean * mean;
                total_sq += ss;
            }
            let within_zero = within <= WITHIN_RTOL * total_sq;
            let between_zero = between <= BETWEEN_RTOL * total_sq;
            (values[j], flags[j]) = match (between_zero, within_zero) {
                (true, true) => (0.0, Degeneracy::ZeroVariance),
                (false, true) => (f64::NAN, Degeneracy::ZeroWithinVariance),
                (true, false) => (0.0, Degeneracy::Normal),
                (false, false) => ((between / df_between) / (within / df_within), Degeneracy::Normal),
            };
        }
        let cap = values
            .iter()
            .zip(&flags)
            .filter(|(_, f)| **f == Degeneracy::Normal)
            .map(|(v, _)| *v)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .filter(|&m| m > 0.0)
            .unwrap_or(1.0);
        for (v, f) in values.iter_mut().zip(&flags) {
            if *f == Degeneracy::ZeroWithinVariance {
                *v = cap;
            }
        }
        Ok(FScores { values, flags })
    }
}

/// Per-connection features of a dense layer: `input[s][i] * weights[o][i]`
/// laid out as `[k, out * in]` (row-major over `(o, i)`); masked connections give 0.
pub fn weight_features(layer: &Dense, layer_input: &Tensor) -> Result<Tensor> {
    let (out, inp) = (layer.out_features(), layer.in_features());
    if layer_input.row_len() != inp {
        return Err(Error::shape(format!(
            "layer input width {} but layer takes {inp}",
            layer_input.row_len()
        )));
    }
    let k = layer_input.rows();
    let mut f = Tensor::zeros(&[k, out * inp]);
    let w = layer.weights.data();
    let m = layer.weight_mask.data();
    for s in 0..k {
        let x = layer_input.row(s);
        let dst = &mut f.data_mut()[s * out * inp..(s + 1) * out * inp];
        for o in 0..out {
            let j = o * inp;
            for (((d, &xi), &wj), &mj) in dst[j..j + inp].iter_mut().zip(x).zip(&w[j..j + inp]).zip(&m[j..j + inp]) {
                *d = xi * wj * mj;
            }
        }
    }
    Ok(f)
}

/// Per-channel features of a batch-norm output `[k, ch, h, w]`: the spatial mean.
pub fn channel_features(bn_output: &Tensor) -> Result<Tensor> {
    if bn_output.shape().len() != 4 {
        return Err(Error::shape(format!(
            "channel features need [k, ch, h, w], got {:?}",
            bn_output.shape()
        )));
    }
    let (k, ch) = (bn_output.shape()[0], bn_output.shape()[1]);
    let spatial = bn_output.shape()[2] * bn_output.shape()[3];
    let mut f = Tensor::zeros(&[k, ch]);
    for (dst, plane) in f.data_mut().iter_mut().zip(bn_output.data().chunks_exact(spatial)) {
        let s: f64 = plane.iter().map(|&v| v as f64).sum();
        *dst = (s / spatial as f64) as f32;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f32]) -> Tensor {
        Tensor::from_vec(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn new_accumulator_is_zeroed() {
        let acc = ScreeningAccumulator::new(2, 1).unwrap();
        assert_eq!(acc.samples(), 0);
        assert_eq!(acc.class_samples(), &[0, 0]);
        assert_eq!(acc.sum(), &[0.0]);
        let big = ScreeningAccumulator::new(10, 267_000).unwrap();
        assert_eq!(big.class_sum(9).len(), 267_000);
        assert!(ScreeningAccumulator::new(0, 3).is_err());
    }

    #[test]
    fn hand_computed_f_of_eight() {
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        acc.update(&column(&[1., 2., 3., 4.]), &[0, 0, 1, 1]).unwrap();
        let f = acc.finalize().unwrap();
        assert!((f.values[0] - 8.0).abs() < 1e-9);
        assert_eq!(f.flags[0], Degeneracy::Normal);
    }

    #[test]
    fn constant_feature_scores_zero() {
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        acc.update(&column(&[3., 3., 3., 3.]), &[0, 1, 0, 1]).unwrap();
        let f = acc.finalize().unwrap();
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.flags[0], Degeneracy::ZeroVariance);
    }

    #[test]
    fn tiny_class_difference_is_not_rounded_away() {
        // Class means 5.0 and 5.0001 with unit spread: F = 2 * 0.0001^2 / 2 / (4 / 2) = 5e-9.
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        acc.update(&column(&[4.0, 6.0, 4.0001, 6.0001]), &[0, 0, 1, 1]).unwrap();
        let f = acc.finalize().unwrap();
        assert_eq!(f.flags[0], Degeneracy::Normal);
        let x = [4.0f32, 6.0, 4.0001, 6.0001].map(f64::from);
        let (m0, m1) = ((x[0] + x[1]) / 2.0, (x[2] + x[3]) / 2.0);
        let g = (m0 + m1) / 2.0;
        let between = 2.0 * ((m0 - g).powi(2) + (m1 - g).powi(2));
        let within = ((x[0] - m0).powi(2) + (x[1] - m0).powi(2) + (x[2] - m1).powi(2) + (x[3] - m1).powi(2)) / 2.0;
        let direct = between / within;
        assert!(direct > 0.0);
        assert!((f.values[0] - direct).abs() <= 1e-6 * direct);
    }

    #[test]
    fn perfectly_separating_feature_gets_group_max() {
        let mut acc = ScreeningAccumulator::new(2, 2).unwrap();
        let feats = Tensor::from_vec(&[4, 2], vec![1., 1., 1., 2., 5., 3., 5., 4.]).unwrap();
        acc.update(&feats, &[0, 0, 1, 1]).unwrap();
        let f = acc.finalize().unwrap();
        assert_eq!(f.flags[0], Degeneracy::ZeroWithinVariance);
        assert!((f.values[1] - 8.0).abs() < 1e-9);
        assert_eq!(f.values[0], f.values[1]);
    }

    #[test]
    fn single_sample_update() {
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        acc.update(&column(&[3.0]), &[1]).unwrap();
        assert_eq!(acc.class_sum(1), &[3.0]);
        assert_eq!(acc.class_sq_sum(1), &[9.0]);
        assert_eq!(acc.class_samples(), &[0, 1]);
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut acc = ScreeningAccumulator::new(3, 4).unwrap();
        let before = acc.clone();
        acc.update(&Tensor::zeros(&[0, 4]), &[]).unwrap();
        assert_eq!(acc, before);
    }

    #[test]
    fn bad_labels_and_widths_are_rejected() {
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        assert!(matches!(acc.update(&column(&[1.0]), &[2]), Err(Error::InvalidInput(_))));
        let wide = Tensor::zeros(&[1, 2]);
        assert!(matches!(acc.update(&wide, &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn reset_semantics() {
        let mut acc = ScreeningAccumulator::new(2, 1).unwrap();
        acc.update(&column(&[1., 2., 3.]), &[0, 1, 1]).unwrap();
        acc.reset();
        assert!(acc.finalize().is_err());
        let snapshot = acc.clone();
        acc.reset();
        assert_eq!(acc, snapshot);

        let batch = column(&[5., 6.]);
        acc.update(&batch, &[0, 1]).unwrap();
        let mut fresh = ScreeningAccumulator::new(2, 1).unwrap();
        fresh.update(&batch, &[0, 1]).unwrap();
        assert_eq!(acc, fresh);
    }

    #[test]
    fn finalize_rejects_too_few_samples() {
        let mut acc = ScreeningAccumulator::new(3, 1).unwrap();
        acc.update(&column(&[1., 2.]), &[0, 1]).unwrap();
        assert!(acc.finalize().is_err());
    }

    #[test]
    fn weight_features_are_input_times_weight() {
        let mut layer = Dense::zeros(2, 3);
        layer.weights.data_mut().fill(1.0);
        let x = Tensor::from_vec(&[2, 2], vec![2., 3., 0., 0.]).unwrap();
        let f = weight_features(&layer, &x).unwrap();
        assert_eq!(f.shape(), &[2, 6]);
        assert_eq!(f.row(0), &[2., 3., 2., 3., 2., 3.]);
        assert_eq!(f.row(1), &[0.0; 6]);

        layer.weight_mask.data_mut()[1] = 0.0;
        let f = weight_features(&layer, &x).unwrap();
        assert_eq!(f.row(0)[1], 0.0);
    }

    #[test]
    fn channel_feature_is_spatial_mean() {
        let t = Tensor::from_vec(&[1, 2, 2, 2], vec![1., 2., 3., 4., 7., 7., 7., 7.]).unwrap();
        let f = channel_features(&t).unwrap();
        assert_eq!(f.data(), &[2.5, 7.0]);
    }

    #[test]
    fn fscore_table_dump() {
        let f = FScores { values: vec![8.0, 0.0], flags: vec![Degeneracy::Normal; 2] };
        let mut buf = Vec::new();
        f.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0\t8.0"));
    }
}
