//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SCRNPRUN"
//! version    u32      FORMAT_VERSION
//! header_len u32
//! header     header_len bytes of UTF-8 JSON (layer descriptors, tensor table, metadata)
//! tensors    f32 values of every tensor listed in the header, in order
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! The checksum is verified before anything is parsed, so a damaged file is
//! refused as a whole.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Dense, Layer, LayerSpec, MaxPool2d, Network, SgdState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SCRNPRUN";
pub const FORMAT_VERSION: u32 = 1;

/// Run bookkeeping stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointInfo {
    /// `"none"`, `"wls"` or `"cls"`.
    pub method: String,
    /// Test error (percent) of exactly these parameters on the configured test split.
    pub test_error: Option<f64>,
    /// Fraction of prunable members removed.
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<SgdState>,
    /// Completed epochs.
    pub epoch: usize,
    pub config_digest: String,
    pub info: CheckpointInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerHeader>,
    tensors: Vec<TensorEntry>,
    epoch: usize,
    config_digest: String,
    info: CheckpointInfo,
    optimizer_tensors: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    name: String,
    spec: LayerSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Named parameter, statistic and mask tensors of one layer, in storage order.
fn layer_tensors<'a>(name: &str, layer: &'a Layer) -> Vec<(String, &'a Tensor)> {
    let t = |suffix: &str, x: &'a Tensor| (format!("{name}.{suffix}"), x);
    match layer {
        Layer::Dense(d) => vec![t("weight", &d.weights), t("bias", &d.bias), t("weight_mask", &d.weight_mask)],
        Layer::Conv2d(c) => vec![
            t("kernel", &c.kernels),
            t("bias", &c.bias),
            t("out_channel_mask", &c.out_channel_mask),
            t("in_channel_mask", &c.in_channel_mask),
        ],
        Layer::BatchNorm2d(b) => vec![
            t("gamma", &b.gamma),
            t("beta", &b.beta),
            t("running_mean", &b.running_mean),
            t("running_var", &b.running_var),
            t("channel_mask", &b.channel_mask),
        ],
        _ => vec![],
    }
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Checkpoint {
            network,
            optimizer: None,
            epoch: 0,
            config_digest: String::new(),
            info: CheckpointInfo::default(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let names = self.network.layer_names();
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        let mut layers = Vec::new();
        for (name, layer) in names.iter().zip(self.network.layers()) {
            layers.push(LayerHeader { name: name.clone(), spec: layer.spec() });
            tensors.extend(layer_tensors(name, layer));
        }
        let velocity: Vec<Tensor> = self
            .optimizer
            .as_ref()
            .map(|s| s.velocity.iter().map(|v| Tensor::from_vec(&[v.len()], v.clone()).expect("1-d")).collect())
            .unwrap_or_default();
        for (i, v) in velocity.iter().enumerate() {
            tensors.push((format!("optimizer.velocity.{i}"), v));
        }
        let header = Header {
            input_shape: self.network.input_shape().to_vec(),
            layers,
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            epoch: self.epoch,
            config_digest: self.config_digest.clone(),
            info: self.info.clone(),
            optimizer_tensors: velocity.len(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&out);
        out.extend_from_slice(&sum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported checkpoint format version {version} (this build reads {FORMAT_VERSION})"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err("checksum mismatch; the file is corrupted or truncated".into());
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_bytes = body.get(16..16 + hlen).ok_or("header extends past the end of the file")?;
        let header: Header = serde_json::from_slice(header_bytes).map_err(|e| format!("bad header: {e}"))?;

        let mut data = &body[16 + hlen..];
        let mut read = |entry: &TensorEntry| -> std::result::Result<Tensor, String> {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(format!("tensor {} extends past the end of the data", entry.name));
            }
            let values = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[4 * n..];
            Tensor::from_vec(&entry.shape, values).map_err(|e| e.to_string())
        };

        let mut entries = header.tensors.iter();
        let mut next = |want: String| -> std::result::Result<Tensor, String> {
            let entry = entries.next().ok_or_else(|| format!("tensor {want} missing"))?;
            if entry.name != want {
                return Err(format!("expected tensor {want}, found {}", entry.name));
            }
            read(entry)
        };
        let mut layers = Vec::new();
        for lh in &header.layers {
            let n = &lh.name;
            let layer = match &lh.spec {
                LayerSpec::Dense { .. } => {
                    let weights = next(format!("{n}.weight"))?;
                    let bias = next(format!("{n}.bias"))?;
                    let weight_mask = next(format!("{n}.weight_mask"))?;
                    Layer::Dense(Dense { weights, bias, weight_mask })
                }
                LayerSpec::Conv2d { stride, padding, .. } => Layer::Conv2d(Conv2d {
                    kernels: next(format!("{n}.kernel"))?,
                    bias: next(format!("{n}.bias"))?,
                    stride: *stride,
                    padding: *padding,
                    out_channel_mask: next(format!("{n}.out_channel_mask"))?,
                    in_channel_mask: next(format!("{n}.in_channel_mask"))?,
                }),
                LayerSpec::BatchNorm2d => {
                    let mut bn = BatchNorm2d::new(0);
                    bn.gamma = next(format!("{n}.gamma"))?;
                    bn.beta = next(format!("{n}.beta"))?;
                    bn.running_mean = next(format!("{n}.running_mean"))?;
                    bn.running_var = next(format!("{n}.running_var"))?;
                    bn.channel_mask = next(format!("{n}.channel_mask"))?;
                    Layer::BatchNorm2d(bn)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { size } => Layer::MaxPool2d(MaxPool2d { size: *size }),
                LayerSpec::Flatten => Layer::Flatten,
            };
            layers.push(layer);
        }
        let optimizer = if header.optimizer_tensors > 0 {
            let velocity = (0..header.optimizer_tensors)
                .map(|i| next(format!("optimizer.velocity.{i}")).map(Tensor::into_data))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Some(SgdState { velocity })
        } else {
            None
        };
        if entries.next().is_some() {
            return Err("header lists tensors that belong to no layer".into());
        }
        if !data.is_empty() {
            return Err(format!("{} unexplained bytes after the tensors", data.len()));
        }
        let network = Network::new(&header.input_shape, layers).map_err(|e| e.to_string())?;
        validate_shapes(&network)?;
        Ok(Checkpoint {
            network,
            optimizer,
            epoch: header.epoch,
            config_digest: header.config_digest,
            info: header.info,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint(format!("{}: {reason}", path.display())))
    }
}

/// Bias and mask lengths must agree with the weight tensors they belong to.
fn validate_shapes(net: &Network) -> std::result::Result<(), String> {
    for layer in net.layers() {
        let ok = match layer {
            Layer::Dense(d) => d.bias.len() == d.out_features() && d.weight_mask.shape() == d.weights.shape(),
            Layer::Conv2d(c) => {
                c.bias.len() == c.out_channels()
                    && c.out_channel_mask.len() == c.out_channels()
                    && c.in_channel_mask.len() == c.in_channels()
            }
            Layer::BatchNorm2d(b) => [&b.beta, &b.running_mean, &b.running_var, &b.channel_mask]
                .iter()
                .all(|t| t.len() == b.channels()),
            _ => true,
        };
        if !ok {
            return Err(format!("inconsistent tensor sizes in a {} layer", layer.kind_name()));
        }
    }
    Ok(())
}
