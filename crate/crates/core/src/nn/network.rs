use std::cell::Cell;

use super::arch::{parse_arch, Block};
use super::layers::{layer_params, layer_params_mut, layer_stats_mut, BatchNorm2d, Conv2d, Layer, Linear};
use super::{prefixed, Module, Pass};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::ops::{self, RunningStats};
use crate::tensor::{Element, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Feature extractor plus classifier head.
///
/// The extractor is every block of the architecture string; its output is
/// the feature map used for adversarial transfer. The head is global average
/// pooling followed by a linear layer.
#[derive(Debug, Clone)]
pub struct Network<E: Element = f32> {
    arch: String,
    input: InputShape,
    num_classes: usize,
    feature_shape: [usize; 3],
    extractor: Vec<Layer<E>>,
    head: Linear<E>,
    extractor_calls: Cell<u64>,
}

pub fn build_network<E: Element>(
    arch: &str,
    input: InputShape,
    num_classes: usize,
    seed: u64,
) -> Result<Network<E>> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let blocks = parse_arch(arch)?;
    let mut rng = rng::stream(seed, "network", 0);
    let (mut c, mut h, mut w) = (input.channels, input.height, input.width);
    let mut extractor = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let layer = match *block {
            Block::Conv {
                channels,
                kernel,
                stride,
            } => {
                let pad = kernel / 2;
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(Error::Config(format!(
                        "`{arch}`: kernel {kernel} exceeds {h}x{w} feature map"
                    )));
                }
                h = (h + 2 * pad - kernel) / stride + 1;
                w = (w + 2 * pad - kernel) / stride + 1;
                let conv = Conv2d::new(c, channels, kernel, stride, pad, false, &mut rng);
                c = channels;
                Layer::Conv(conv)
            }
            Block::Bn => Layer::Bn(BatchNorm2d::new(c)),
            Block::Relu => Layer::Relu,
            Block::Pool(p) => {
                if h < p || w < p {
                    return Err(Error::Config(format!(
                        "`{arch}`: pool {p} on {h}x{w} feature map"
                    )));
                }
                h /= p;
                w /= p;
                Layer::MaxPool(p)
            }
        };
        extractor.push(layer);
    }
    let head = Linear::new(c, num_classes, &mut rng);
    Ok(Network {
        arch: arch.to_string(),
        input,
        num_classes,
        feature_shape: [c, h, w],
        extractor,
        head,
        extractor_calls: Cell::new(0),
    })
}

impl<E: Element> Network<E> {
    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input_shape(&self) -> InputShape {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `[C, H, W]` of the last-stage feature map.
    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature_shape
    }

    pub fn feature_channels(&self) -> usize {
        self.feature_shape[0]
    }

    /// Number of extractor passes run so far.
    pub fn extractor_calls(&self) -> u64 {
        self.extractor_calls.get()
    }

    pub fn reset_extractor_calls(&self) {
        self.extractor_calls.set(0);
    }

    fn check_input(&self, x: &Tensor<E>) -> Result<()> {
        let InputShape {
            channels,
            height,
            width,
        } = self.input;
        match *x.shape() {
            [_, c, h, w] if c == channels && h == height && w == width => Ok(()),
            ref s => Err(Error::dim(
                "network",
                format!("input {s:?}, expected [B, {channels}, {height}, {width}]"),
            )),
        }
    }

    /// Last-stage feature map.
    pub fn extract(&mut self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        self.check_input(x)?;
        self.extractor_calls.set(self.extractor_calls.get() + 1);
        let mut h = x.clone();
        for layer in &mut self.extractor {
            h = layer.forward(&h, pass)?;
        }
        Ok(h)
    }

    /// Logits from a feature map.
    pub fn classify(&self, feature: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        let pooled = ops::global_avg_pool(feature)?;
        self.head.forward(&pooled, pass)
    }

    /// Feature map and logits from one extractor pass.
    pub fn forward(&mut self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let feature = self.extract(x, pass)?;
        let logits = self.classify(&feature, pass)?;
        Ok((feature, logits))
    }

    pub fn extractor_params(&self) -> Vec<(String, &Param<E>)> {
        layer_params("extractor", &self.extractor)
    }

    pub fn extractor_params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        layer_params_mut("extractor", &mut self.extractor)
    }

    pub fn head(&self) -> &Linear<E> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Linear<E> {
        &mut self.head
    }

    pub fn head_params(&self) -> Vec<(String, &Param<E>)> {
        prefixed("head", self.head.params()).collect()
    }
}

impl<E: Element> Module<E> for Network<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        let mut v = self.extractor_params();
        v.extend(self.head_params());
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut v = layer_params_mut("extractor", &mut self.extractor);
        v.extend(prefixed("head", self.head.params_mut()));
        v
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        layer_stats_mut("extractor", &mut self.extractor)
    }
}
