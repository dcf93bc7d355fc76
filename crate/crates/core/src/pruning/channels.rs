//! Keeps conv kernels consistent with batch-norm channel masks.

use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

/// Where a batch-norm channel's activation goes next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consumer {
    Conv(usize),
    /// Dense layer behind a flatten; each channel owns `spatial` consecutive inputs.
    Dense { layer: usize, spatial: usize },
    None,
}

/// Producer conv, batch-norm layer, and consumer of one channel set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLink {
    pub producer: usize,
    pub batch_norm: usize,
    pub consumer: Consumer,
}

/// Resolves the conv -> BN -> (ReLU | pool)* -> consumer chain for every BN layer.
pub fn channel_links(network: &Network) -> Result<Vec<ChannelLink>> {
    let layers = network.layers();
    let shapes = network.layer_shapes()?;
    let mut links = Vec::new();
    for bn_idx in network.batch_norm_indices() {
        let bad = |why: String| Err(Error::invalid(format!("batch norm at layer {bn_idx}: {why}")));
        let producer = match bn_idx.checked_sub(1).map(|i| &layers[i]) {
            Some(Layer::Conv2d(_)) => bn_idx - 1,
            _ => return bad("not directly preceded by a conv layer".into()),
        };
        let mut j = bn_idx + 1;
        while j < layers.len() && matches!(layers[j], Layer::Relu | Layer::MaxPool2d(_)) {
            j += 1;
        }
        let consumer = match layers.get(j) {
            None => Consumer::None,
            Some(Layer::Conv2d(_)) => Consumer::Conv(j),
            Some(Layer::Flatten) => match layers.get(j + 1) {
                Some(Layer::Dense(_)) => {
                    let s = &shapes[j];
                    Consumer::Dense { layer: j + 1, spatial: s[1] * s[2] }
                }
                _ => return bad("flatten is not followed by a dense layer".into()),
            },
            Some(other) => return bad(format!("channels feed a {} layer directly", other.kind_name())),
        };
        links.push(ChannelLink { producer, batch_norm: bn_idx, consumer });
    }
    Ok(links)
}

/// Copies every BN channel mask onto the producing conv's output channels and
/// the consumer's input channels, then zeroes all masked parameters.
pub fn propagate_channel_masks(network: &mut Network) -> Result<()> {
    let links = channel_links(network)?;
    let layers = network.layers_mut();
    for link in links {
        let mask = match &layers[link.batch_norm] {
            Layer::BatchNorm2d(bn) => bn.channel_mask.clone(),
            _ => unreachable!("link points at a batch norm"),
        };
        if let Layer::Conv2d(conv) = &mut layers[link.producer] {
            conv.out_channel_mask = mask.clone();
        }
        match link.consumer {
            Consumer::Conv(c) => {
                if let Layer::Conv2d(conv) = &mut layers[c] {
                    conv.in_channel_mask = mask.clone();
                }
            }
            Consumer::Dense { layer, spatial } => {
                if let Layer::Dense(d) = &mut layers[layer] {
                    let inp = d.in_features();
                    for (ch, &m) in mask.data().iter().enumerate() {
                        if m != 0.0 {
                            continue;
                        }
                        for row in d.weight_mask.data_mut().chunks_exact_mut(inp) {
                            row[ch * spatial..(ch + 1) * spatial].fill(0.0);
                        }
                    }
                }
            }
            Consumer::None => {}
        }
    }
    network.apply_masks();
    Ok(())
}
