use std::borrow::Cow;

use rand::Rng;

use super::layers::{relu, relu_backward, BatchNorm2d, BnCache, Conv2d, Dense, Layer, LayerSpec, MaxPool2d};
use super::loss::cross_entropy_loss;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered stack of layers with a fixed per-sample input shape.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Bumped on every parameter mutation; ties caches to the state they saw.
    version: u64,
}

/// Per-layer activations and auxiliary state from a train-mode forward pass.
///
/// `activations[i]` is the input of layer `i`; the last entry holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Tensor>,
    aux: Vec<Aux>,
    version: u64,
    train_mode: bool,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    BatchNorm(BnCache),
    Pool(Vec<u32>),
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("cache always holds the logits")
    }

    /// Input of layer `index`.
    pub fn layer_input(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }

    /// Output of layer `index`.
    pub fn layer_output(&self, index: usize) -> &Tensor {
        &self.activations[index + 1]
    }
}

/// Gradient of one layer's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Dense { weights: Tensor, bias: Tensor },
    Conv2d { kernels: Tensor, bias: Tensor },
    BatchNorm2d { gamma: Tensor, beta: Tensor },
    None,
}

impl LayerGrad {
    /// Gradient tensors in the same order as [`Network::param_slots_mut`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            LayerGrad::Dense { weights, bias } => vec![weights, bias],
            LayerGrad::Conv2d { kernels, bias } => vec![kernels, bias],
            LayerGrad::BatchNorm2d { gamma, beta } => vec![gamma, beta],
            LayerGrad::None => vec![],
        }
    }
}

/// Gradients of the mean cross-entropy loss for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f32,
    pub layers: Vec<LayerGrad>,
}

/// One trainable parameter tensor with its elementwise mask, if any.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f32],
    pub mask: Option<Cow<'a, [f32]>>,
}

/// Equal shapes and layer parameters; the internal version counter is ignored.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl Network {
    /// Builds a network, checking that every adjacent pair of layers agrees on shape.
    pub fn new(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        let net = Network {
            input_shape: input_shape.to_vec(),
            layers,
            version: 0,
        };
        net.layer_shapes()?;
        Ok(net)
    }

    /// Instantiates layer descriptors with Kaiming-uniform weights.
    pub fn from_specs<R: Rng>(input_shape: &[usize], specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Dense { out } => {
                    if shape.len() != 1 {
                        return Err(Error::shape(format!("dense layer needs a flat input, got {shape:?}")));
                    }
                    Layer::Dense(Dense::init(shape[0], out, rng))
                }
                LayerSpec::Conv2d { out, kernel, stride, padding } => {
                    if shape.len() != 3 {
                        return Err(Error::shape(format!("conv layer needs [c, h, w], got {shape:?}")));
                    }
                    Layer::Conv2d(Conv2d::init(shape[0], out, kernel, stride, padding, rng))
                }
                LayerSpec::BatchNorm2d => {
                    if shape.len() != 3 {
                        return Err(Error::shape(format!("batch norm needs [c, h, w], got {shape:?}")));
                    }
                    Layer::BatchNorm2d(BatchNorm2d::new(shape[0]))
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2d { size } => Layer::MaxPool2d(MaxPool2d { size }),
                LayerSpec::Flatten => Layer::Flatten,
            };
            shape = layer.output_shape(&shape)?;
            layers.push(layer);
        }
        Network::new(input_shape, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version += 1;
        &mut self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Per-sample shapes: entry `i` is the input of layer `i`, the last is the output.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_size(&self) -> usize {
        self.layer_shapes()
            .map(|s| s.last().unwrap().iter().product())
            .unwrap_or(0)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm2d(_)))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "batch of shape {:?} does not match network input [k, {:?}]",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Runs the network. In train mode batch norm uses mini-batch statistics,
    /// updates its running statistics, and a cache for [`Network::backward`] is kept.
    pub fn forward(&mut self, batch: &Tensor, train_mode: bool) -> Result<(Tensor, ForwardCache)> {
        self.check_batch(batch)?;
        if train_mode && batch.rows() < 2 && self.has_batch_norm() {
            return Err(Error::invalid("batch norm in train mode needs at least 2 samples"));
        }
        if train_mode {
            self.version += 1;
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for layer in &mut self.layers {
            let x = activations.last().unwrap();
            let (y, a) = match layer {
                Layer::Dense(d) => (d.forward(x), Aux::None),
                Layer::Conv2d(c) => (c.forward(x), Aux::None),
                Layer::BatchNorm2d(bn) if train_mode => {
                    let (y, cache) = bn.forward_train(x);
                    (y, Aux::BatchNorm(cache))
                }
                Layer::BatchNorm2d(bn) => (bn.forward_eval(x), Aux::None),
                Layer::Relu => (relu(x), Aux::None),
                Layer::MaxPool2d(p) => {
                    let (y, arg) = p.forward(x);
                    (y, Aux::Pool(arg))
                }
                Layer::Flatten => {
                    let k = x.rows();
                    let w = x.row_len();
                    (x.clone().reshape(&[k, w])?, Aux::None)
                }
            };
            activations.push(y);
            aux.push(a);
        }
        let cache = ForwardCache {
            activations,
            aux,
            version: self.version,
            train_mode,
        };
        Ok((cache.logits().clone(), cache))
    }

    /// Eval-mode forward pass without caching; the network is not modified.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => d.forward(&x),
                Layer::Conv2d(c) => c.forward(&x),
                Layer::BatchNorm2d(bn) => bn.forward_eval(&x),
                Layer::Relu => relu(&x),
                Layer::MaxPool2d(p) => p.forward(&x).0,
                Layer::Flatten => {
                    let k = x.rows();
                    let w = x.row_len();
                    x.reshape(&[k, w])?
                }
            };
        }
        Ok(x)
    }

    /// Gradient of the mean cross-entropy loss with respect to every parameter.
    /// Masked positions receive exactly zero gradient.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
        if !cache.train_mode {
            return Err(Error::invalid("backward needs a cache from a train-mode forward pass"));
        }
        if cache.version != self.version || cache.aux.len() != self.layers.len() {
            return Err(Error::invalid("forward cache is stale or belongs to another network"));
        }
        let (loss, mut grad) = cross_entropy_loss(cache.logits(), labels)?;
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[i];
            let need_dx = i > 0;
            grad = match (layer, &cache.aux[i]) {
                (Layer::Dense(d), _) => {
                    let (dx, mut dw, db) = d.backward(x, &grad, need_dx);
                    for (g, m) in dw.data_mut().iter_mut().zip(d.weight_mask.data()) {
                        *g *= m;
                    }
                    grads[i] = LayerGrad::Dense { weights: dw, bias: db };
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::Conv2d(c), _) => {
                    let (dx, mut dk, mut db) = c.backward(x, &grad, need_dx);
                    for (g, m) in dk.data_mut().iter_mut().zip(c.kernel_mask()) {
                        *g *= m;
                    }
                    for (g, m) in db.data_mut().iter_mut().zip(c.out_channel_mask.data()) {
                        *g *= m;
                    }
                    grads[i] = LayerGrad::Conv2d { kernels: dk, bias: db };
                    match dx {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (Layer::BatchNorm2d(bn), Aux::BatchNorm(bc)) => {
                    let (dx, mut dg, mut dbeta) = bn.backward(bc, &grad);
                    for ((g, b), m) in dg.data_mut().iter_mut().zip(dbeta.data_mut()).zip(bn.channel_mask.data()) {
                        *g *= m;
                        *b *= m;
                    }
                    grads[i] = LayerGrad::BatchNorm2d { gamma: dg, beta: dbeta };
                    dx
                }
                (Layer::BatchNorm2d(_), _) => {
                    return Err(Error::invalid("batch norm cache missing from forward pass"));
                }
                (Layer::Relu, _) => relu_backward(x, &grad),
                (Layer::MaxPool2d(p), Aux::Pool(arg)) => p.backward(x.shape(), arg, &grad),
                (Layer::MaxPool2d(_), _) => {
                    return Err(Error::invalid("pooling cache missing from forward pass"));
                }
                (Layer::Flatten, _) => grad.reshape(x.shape())?,
            };
        }
        Ok(Gradients { loss, layers: grads })
    }

    /// Every trainable tensor with its effective elementwise mask, layer by layer.
    /// Invalidates outstanding forward caches.
    pub fn param_slots_mut(&mut self) -> Vec<ParamSlot<'_>> {
        self.version += 1;
        let mut slots = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    slots.push(ParamSlot {
                        values: d.weights.data_mut(),
                        mask: Some(Cow::Borrowed(d.weight_mask.data())),
                    });
                    slots.push(ParamSlot {
                        values: d.bias.data_mut(),
                        mask: None,
                    });
                }
                Layer::Conv2d(c) => {
                    let kmask = c.kernel_mask();
                    slots.push(ParamSlot {
                        values: c.kernels.data_mut(),
                        mask: Some(Cow::Owned(kmask)),
                    });
                    slots.push(ParamSlot {
                        values: c.bias.data_mut(),
                        mask: Some(Cow::Borrowed(c.out_channel_mask.data())),
                    });
                }
                Layer::BatchNorm2d(bn) => {
                    slots.push(ParamSlot {
                        values: bn.gamma.data_mut(),
                        mask: Some(Cow::Borrowed(bn.channel_mask.data())),
                    });
                    slots.push(ParamSlot {
                        values: bn.beta.data_mut(),
                        mask: Some(Cow::Borrowed(bn.channel_mask.data())),
                    });
                }
                Layer::Relu | Layer::MaxPool2d(_) | Layer::Flatten => {}
            }
        }
        slots
    }

    /// Zeroes every masked parameter; unmasked values are untouched.
    pub fn apply_masks(&mut self) {
        for slot in self.param_slots_mut() {
            if let Some(mask) = slot.mask {
                for (v, m) in slot.values.iter_mut().zip(mask.iter()) {
                    if *m == 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    /// Total trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weights.len() + d.bias.len(),
                Layer::Conv2d(c) => c.kernels.len() + c.bias.len(),
                Layer::BatchNorm2d(bn) => 2 * bn.channels(),
                _ => 0,
            })
            .sum()
    }

    /// Indices of the dense layers, in order.
    pub fn dense_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Dense(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of the batch-norm layers, in order.
    pub fn batch_norm_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::BatchNorm2d(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Human-readable names: `fc1, fc2, ...` for dense, `conv1, bn1, ...` otherwise.
    pub fn layer_names(&self) -> Vec<String> {
        let (mut fc, mut conv, mut bn) = (0, 0, 0);
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(_) => {
                    fc += 1;
                    format!("fc{fc}")
                }
                Layer::Conv2d(_) => {
                    conv += 1;
                    format!("conv{conv}")
                }
                Layer::BatchNorm2d(_) => {
                    bn += 1;
                    format!("bn{bn}")
                }
                other => other.kind_name().to_string(),
            })
            .collect()
    }
}
