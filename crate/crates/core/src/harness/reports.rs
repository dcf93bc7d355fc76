//! Reports computed from a network alone: layer-wise compression, channel
//! counts, weight histograms and mask images.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Layer, Network};
use crate::pruning::channel_links;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionRow {
    pub layer: String,
    pub original: usize,
    pub kept: usize,
    pub kept_percent: f64,
}

fn percent(kept: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * kept as f64 / total as f64
    }
}

/// Kept weights per dense and conv layer (biases excluded), plus a `total` row.
pub fn layer_compression(network: &Network) -> Vec<CompressionRow> {
    let mut rows = Vec::new();
    for (name, layer) in network.layer_names().into_iter().zip(network.layers()) {
        let (original, kept) = match layer {
            Layer::Dense(d) => (d.weights.len(), d.kept_weights()),
            Layer::Conv2d(c) => (c.kernels.len(), c.kernel_mask().iter().filter(|&&m| m != 0.0).count()),
            _ => continue,
        };
        rows.push(CompressionRow { layer: name, original, kept, kept_percent: percent(kept, original) });
    }
    let original = rows.iter().map(|r| r.original).sum();
    let kept = rows.iter().map(|r| r.kept).sum();
    rows.push(CompressionRow { layer: "total".into(), original, kept, kept_percent: percent(kept, original) });
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelRow {
    pub layer: String,
    pub original: usize,
    pub remaining: usize,
    /// Output channels of the producing conv that still have a nonzero kernel weight.
    pub nonzero_kernels: usize,
}

/// Original and remaining channels of every batch-norm layer.
pub fn channels_per_layer(network: &Network) -> Result<Vec<ChannelRow>> {
    let names = network.layer_names();
    let mut rows = Vec::new();
    for link in channel_links(network)? {
        let (Layer::BatchNorm2d(bn), Layer::Conv2d(conv)) = (&network.layers()[link.batch_norm], &network.layers()[link.producer])
        else {
            unreachable!("links pair a conv with a batch norm")
        };
        let per = conv.kernels.len() / conv.out_channels();
        let nonzero_kernels = conv
            .kernels
            .data()
            .chunks_exact(per)
            .filter(|k| k.iter().any(|&v| v != 0.0))
            .count();
        rows.push(ChannelRow {
            layer: names[link.batch_norm].clone(),
            original: bn.channels(),
            remaining: bn.kept_channels(),
            nonzero_kernels,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges; empty when there are no weights to count.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Histogram of the magnitudes of all nonzero kept dense and conv weights,
/// over `bins` equal-width bins spanning `[0, max]`.
pub fn weight_histogram(network: &Network, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("a histogram needs at least one bin"));
    }
    let mut mags = Vec::new();
    for layer in network.layers() {
        match layer {
            Layer::Dense(d) => mags.extend(
                d.weights
                    .data()
                    .iter()
                    .zip(d.weight_mask.data())
                    .filter(|(w, m)| **m != 0.0 && **w != 0.0)
                    .map(|(w, _)| w.abs() as f64),
            ),
            Layer::Conv2d(c) => mags.extend(
                c.kernels
                    .data()
                    .iter()
                    .zip(c.kernel_mask())
                    .filter(|(w, m)| *m != 0.0 && **w != 0.0)
                    .map(|(w, _)| w.abs() as f64),
            ),
            _ => {}
        }
    }
    if mags.is_empty() {
        return Ok(Histogram { edges: vec![], counts: vec![] });
    }
    let hi = mags.iter().cloned().fold(0.0, f64::max);
    let width = hi / bins as f64;
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for m in mags {
        let b = ((m / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// The weight mask of a dense layer as a plain-text PGM (`P2`, maxval 1):
/// one row per unit, one column per input, 1 = kept.
pub fn mask_pgm(network: &Network, layer: &str) -> Result<String> {
    let names = network.layer_names();
    let idx = names
        .iter()
        .position(|n| n == layer)
        .ok_or_else(|| Error::invalid(format!("no layer named {layer}; layers: {}", names.join(", "))))?;
    let Layer::Dense(d) = &network.layers()[idx] else {
        return Err(Error::invalid(format!("{layer} is a {} layer; masks are exported for dense layers", network.layers()[idx].kind_name())));
    };
    let (rows, cols) = (d.out_features(), d.in_features());
    let mut out = format!("P2\n# {layer} weight mask, {rows} units x {cols} inputs, 1 = kept\n{cols} {rows}\n1\n");
    for row in d.weight_mask.data().chunks_exact(cols) {
        let line: Vec<&str> = row.iter().map(|&m| if m != 0.0 { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Parses a `P2` grid written by [`mask_pgm`] back into rows of 0/1.
pub fn parse_pgm(text: &str) -> Result<Vec<Vec<u8>>> {
    let bad = |why: &str| Error::invalid(format!("not a P2 mask grid: {why}"));
    let mut tokens = text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut num = || -> Result<usize> { tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("truncated")) };
    let (cols, rows, _max) = (num()?, num()?, num()?);
    let mut grid = Vec::with_capacity(rows);
    for _ in 0..rows {
        let row = (0..cols).map(|_| num().map(|v| v as u8)).collect::<Result<Vec<u8>>>()?;
        grid.push(row);
    }
    Ok(grid)
}

/// Renders rows as an aligned plain-text table.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  "));
    };
    line(header.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Comma-separated rendering of the same rows.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn compression_cells(rows: &[CompressionRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    (
        vec!["layer", "params", "kept", "kept_percent"],
        rows.iter()
            .map(|r| vec![r.layer.clone(), r.original.to_string(), r.kept.to_string(), format!("{:.2}", r.kept_percent)])
            .collect(),
    )
}

pub fn channel_cells(rows: &[ChannelRow]) -> (Vec<&'static str>, Vec<Vec<String>>) {
    (
        vec!["layer", "original", "remaining", "nonzero_kernels"],
        rows.iter()
            .map(|r| vec![r.layer.clone(), r.original.to_string(), r.remaining.to_string(), r.nonzero_kernels.to_string()])
            .collect(),
    )
}

pub fn histogram_cells(h: &Histogram) -> (Vec<&'static str>, Vec<Vec<String>>) {
    (
        vec!["bin_start", "bin_end", "count"],
        h.counts
            .iter()
            .enumerate()
            .map(|(i, c)| vec![format!("{:.6}", h.edges[i]), format!("{:.6}", h.edges[i + 1]), c.to_string()])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::models;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lenet() -> Network {
        let (s, l) = models::lenet_300_100();
        Network::from_specs(&s, &l, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn unpruned_network_keeps_everything() {
        let rows = layer_compression(&lenet());
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.kept_percent == 100.0));
        assert_eq!(rows[3].original, 784 * 300 + 300 * 100 + 100 * 10);
    }

    #[test]
    fn compression_matches_independent_recount() {
        let mut net = lenet();
        if let Layer::Dense(d) = &mut net.layers_mut()[1] {
            for i in (0..d.weight_mask.len()).step_by(3) {
                d.weight_mask.data_mut()[i] = 0.0;
            }
        }
        let rows = layer_compression(&net);
        let Layer::Dense(d) = &net.layers()[1] else { panic!() };
        let recount = d.weight_mask.data().iter().filter(|&&m| m == 1.0).count();
        assert_eq!(rows[0].kept, recount);
        assert_eq!(rows[3].kept, recount + 30_000 + 1_000);
    }

    #[test]
    fn histogram_counts_every_nonzero_weight() {
        let net = lenet();
        let h = weight_histogram(&net, 20).unwrap();
        assert_eq!(h.counts.len(), 20);
        assert_eq!(h.edges.len(), 21);
        assert_eq!(h.counts.iter().sum::<usize>(), layer_compression(&net)[3].kept);

        let mut empty = net.clone();
        for l in empty.layers_mut() {
            if let Layer::Dense(d) = l {
                d.weight_mask.data_mut().fill(0.0);
            }
        }
        let h = weight_histogram(&empty, 5).unwrap();
        assert!(h.counts.is_empty());
        assert!(weight_histogram(&net, 0).is_err());
    }

    #[test]
    fn mask_grid_dimensions_and_foreground() {
        let mut net = lenet();
        if let Layer::Dense(d) = &mut net.layers_mut()[1] {
            d.weight_mask.data_mut()[5] = 0.0;
        }
        let text = mask_pgm(&net, "fc1").unwrap();
        let grid = parse_pgm(&text).unwrap();
        assert_eq!((grid.len(), grid[0].len()), (300, 784));
        let ones: usize = grid.iter().flatten().map(|&v| v as usize).sum();
        assert_eq!(ones, 300 * 784 - 1);
        assert!(mask_pgm(&net, "relu").is_err());
        assert!(mask_pgm(&net, "fc9").is_err());
    }

    #[test]
    fn channel_counts_recount_kernels() {
        let (s, l) = models::small_bn_cnn();
        let mut net = Network::from_specs(&s, &l, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rows = channels_per_layer(&net).unwrap();
        assert!(rows.iter().all(|r| r.original == r.remaining && r.remaining == r.nonzero_kernels));
        if let Layer::BatchNorm2d(bn) = &mut net.layers_mut()[1] {
            bn.channel_mask.data_mut()[..4].fill(0.0);
        }
        crate::pruning::propagate_channel_masks(&mut net).unwrap();
        let rows = channels_per_layer(&net).unwrap();
        assert_eq!((rows[0].original, rows[0].remaining, rows[0].nonzero_kernels), (32, 28, 28));
    }

    #[test]
    fn tables_align() {
        let t = text_table(&["a", "bb"], &[vec!["100".into(), "2".into()]]);
        assert_eq!(t, "  a  bb\n100   2\n");
        assert_eq!(csv_table(&["a", "bb"], &[vec!["1".into(), "2".into()]]), "a,bb\n1,2\n");
    }
}
