//! The two reference architectures.

use super::layers::LayerSpec;

/// LeNet-300-100: 784 -> 300 -> 100 -> 10 with ReLU between dense layers.
pub fn lenet_300_100() -> (Vec<usize>, Vec<LayerSpec>) {
    (
        vec![1, 28, 28],
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 300 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 100 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 10 },
        ],
    )
}

/// Desk-scale BN-CNN for 32x32 RGB input: four conv+BN+ReLU blocks
/// (32/64/128/128 channels), max pooling after the first two, one dense classifier.
pub fn small_bn_cnn() -> (Vec<usize>, Vec<LayerSpec>) {
    let conv = |out| LayerSpec::Conv2d { out, kernel: 3, stride: 1, padding: 1 };
    (
        vec![3, 32, 32],
        vec![
            conv(32),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            conv(64),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            conv(128),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            conv(128),
            LayerSpec::BatchNorm2d,
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 10 },
        ],
    )
}
