//! Structural removal of dead dense units and masked conv channels.
//!
//! The compacted network computes the same eval-mode function as the masked
//! one but with smaller matrices and fewer channels.

use serde::Serialize;

use super::channels::{channel_links, Consumer};
use crate::error::Result;
use crate::nn::{Layer, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovedMembers {
    pub layer: String,
    pub kind: &'static str,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CompactionReport {
    pub removed: Vec<RemovedMembers>,
    /// Kept (unmasked) weights that disappeared with a removed unit.
    pub removed_connections: usize,
    pub parameters_before: usize,
    pub parameters_after: usize,
    pub warnings: Vec<String>,
}

/// Builds the structurally smaller equivalent of `network` (after applying its masks).
pub fn compact(network: &Network) -> Result<(Network, CompactionReport)> {
    let mut net = network.clone();
    net.apply_masks();
    let names = net.layer_names();
    let mut report = CompactionReport {
        parameters_before: net.parameter_count(),
        ..Default::default()
    };
    let links = channel_links(&net)?;
    let input_shape = net.input_shape().to_vec();
    let mut layers: Vec<Layer> = net.layers().to_vec();

    for link in links {
        let keep: Vec<usize> = match &layers[link.batch_norm] {
            Layer::BatchNorm2d(bn) => (0..bn.channels()).filter(|&c| bn.channel_mask.data()[c] != 0.0).collect(),
            _ => unreachable!(),
        };
        let total = match &layers[link.batch_norm] {
            Layer::BatchNorm2d(bn) => bn.channels(),
            _ => unreachable!(),
        };
        if keep.len() == total {
            continue;
        }
        if let Layer::BatchNorm2d(bn) = &mut layers[link.batch_norm] {
            for t in [
                &mut bn.gamma,
                &mut bn.beta,
                &mut bn.running_mean,
                &mut bn.running_var,
                &mut bn.channel_mask,
            ] {
                *t = select(t, &[total], 0, &keep);
            }
        }
        if let Layer::Conv2d(conv) = &mut layers[link.producer] {
            let shape = conv.kernels.shape().to_vec();
            conv.kernels = select(&conv.kernels, &shape, 0, &keep);
            conv.bias = select(&conv.bias, &[total], 0, &keep);
            conv.out_channel_mask = select(&conv.out_channel_mask, &[total], 0, &keep);
        }
        match link.consumer {
            Consumer::Conv(c) => {
                if let Layer::Conv2d(conv) = &mut layers[c] {
                    let shape = conv.kernels.shape().to_vec();
                    conv.kernels = select(&conv.kernels, &shape, 1, &keep);
                    conv.in_channel_mask = select(&conv.in_channel_mask, &[total], 0, &keep);
                }
            }
            Consumer::Dense { layer, spatial } => {
                if let Layer::Dense(d) = &mut layers[layer] {
                    let out = d.out_features();
                    let shape = [out, total, spatial];
                    d.weights = select(&d.weights, &shape, 1, &keep).reshape(&[out, keep.len() * spatial])?;
                    d.weight_mask = select(&d.weight_mask, &shape, 1, &keep).reshape(&[out, keep.len() * spatial])?;
                }
            }
            Consumer::None => {}
        }
        report.removed.push(RemovedMembers {
            layer: names[link.batch_norm].clone(),
            kind: "channels",
            count: total - keep.len(),
        });
    }

    let dense_pairs = dense_pairs(&layers);
    let mut removed_units = vec![0usize; layers.len()];
    loop {
        let mut changed = false;
        for &(j, next, through_relu) in &dense_pairs {
            let (Layer::Dense(a), Layer::Dense(b)) = pair_mut(&mut layers, j, next) else {
                unreachable!()
            };
            let (inp, out) = (a.in_features(), a.out_features());
            let b_in = b.in_features();
            let mut keep = Vec::with_capacity(out);
            for o in 0..out {
                let row = &a.weight_mask.data()[o * inp..(o + 1) * inp];
                let kept_in = row.iter().filter(|&&m| m != 0.0).count();
                let kept_out = (0..b.out_features())
                    .filter(|&q| b.weight_mask.data()[q * b_in + o] != 0.0)
                    .count();
                if kept_out == 0 {
                    report.removed_connections += kept_in;
                } else if kept_in == 0 {
                    let bias = a.bias.data()[o];
                    let act = if through_relu { bias.max(0.0) } else { bias };
                    if act != 0.0 {
                        for q in 0..b.out_features() {
                            b.bias.data_mut()[q] += b.weights.data()[q * b_in + o] * act;
                        }
                    }
                    report.removed_connections += kept_out;
                } else {
                    keep.push(o);
                    continue;
                }
                removed_units[j] += 1;
                changed = true;
            }
            if keep.len() < out {
                a.weights = select(&a.weights, &[out, inp], 0, &keep);
                a.weight_mask = select(&a.weight_mask, &[out, inp], 0, &keep);
                a.bias = select(&a.bias, &[out], 0, &keep);
                let bo = b.out_features();
                b.weights = select(&b.weights, &[bo, b_in], 1, &keep);
                b.weight_mask = select(&b.weight_mask, &[bo, b_in], 1, &keep);
            }
        }
        if !changed {
            break;
        }
    }
    for (j, &count) in removed_units.iter().enumerate() {
        if count > 0 {
            report.removed.push(RemovedMembers { layer: names[j].clone(), kind: "units", count });
        }
    }
    report.warnings = unfoldable_dead_units(&layers, &dense_pairs, &names);

    let compacted = Network::new(&input_shape, layers)?;
    report.parameters_after = compacted.parameter_count();
    Ok((compacted, report))
}

/// `(dense, next dense, separated by ReLU)` for every directly chained pair.
fn dense_pairs(layers: &[Layer]) -> Vec<(usize, usize, bool)> {
    let mut pairs = Vec::new();
    for (j, layer) in layers.iter().enumerate() {
        if !matches!(layer, Layer::Dense(_)) {
            continue;
        }
        let mut k = j + 1;
        let mut relu = false;
        while k < layers.len() && matches!(layers[k], Layer::Relu) {
            relu = true;
            k += 1;
        }
        if matches!(layers.get(k), Some(Layer::Dense(_))) {
            pairs.push((j, k, relu));
        }
    }
    pairs
}

fn unfoldable_dead_units(layers: &[Layer], pairs: &[(usize, usize, bool)], names: &[String]) -> Vec<String> {
    let mut warnings = Vec::new();
    let last_dense = layers.iter().rposition(|l| matches!(l, Layer::Dense(_)));
    for (j, layer) in layers.iter().enumerate() {
        let Layer::Dense(d) = layer else { continue };
        if Some(j) == last_dense || pairs.iter().any(|p| p.0 == j) {
            continue;
        }
        let inp = d.in_features();
        let dead = (0..d.out_features())
            .filter(|&o| d.weight_mask.data()[o * inp..(o + 1) * inp].iter().all(|&m| m == 0.0))
            .count();
        if dead > 0 {
            warnings.push(format!(
                "{}: {dead} units without incoming connections retained (no dense successor to fold into)",
                names[j]
            ));
        }
    }
    warnings
}

fn pair_mut(layers: &mut [Layer], a: usize, b: usize) -> (&mut Layer, &mut Layer) {
    assert!(a < b);
    let (left, right) = layers.split_at_mut(b);
    (&mut left[a], &mut right[0])
}

/// Keeps the listed indices along `axis` of a tensor viewed with `shape`.
fn select(t: &Tensor, shape: &[usize], axis: usize, keep: &[usize]) -> Tensor {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let dim = shape[axis];
    let mut data = Vec::with_capacity(outer * keep.len() * inner);
    for o in 0..outer {
        for &k in keep {
            let start = (o * dim + k) * inner;
            data.extend_from_slice(&t.data()[start..start + inner]);
        }
    }
    let mut new_shape = t.shape().to_vec();
    if new_shape.len() == shape.len() {
        new_shape[axis] = keep.len();
    } else {
        let mut s = shape.to_vec();
        s[axis] = keep.len();
        new_shape = s;
    }
    Tensor::from_vec(&new_shape, data).expect("selection preserves element count")
}
