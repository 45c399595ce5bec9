use super::layers::{BatchNorm2d, Conv2d};
use super::{prefixed, Module, Pass};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::ops::{self, Activation, RunningStats};
use crate::tensor::{Element, Param, Tensor};

/// Smallest feature-map height/width a discriminator accepts.
pub const MIN_SPATIAL: usize = 4;

const LEAKY_SLOPE: f64 = 0.2;

/// Feature-map scorer: strided conv, batch norm, leaky ReLU, strided conv to
/// a single channel, spatial mean, sigmoid. Emits one value in (0,1) per
/// sample.
#[derive(Debug, Clone)]
pub struct Discriminator<E: Element = f32> {
    in_channels: usize,
    conv1: Conv2d<E>,
    bn: BatchNorm2d<E>,
    conv2: Conv2d<E>,
}

pub fn build_discriminator<E: Element>(
    in_channels: usize,
    base_width: usize,
    seed: u64,
) -> Result<Discriminator<E>> {
    if in_channels == 0 || base_width == 0 {
        return Err(Error::Config(
            "discriminator needs positive channel counts".into(),
        ));
    }
    let mut rng = rng::stream(seed, "discriminator", 0);
    Ok(Discriminator {
        in_channels,
        conv1: Conv2d::new(in_channels, base_width, 3, 2, 1, false, &mut rng),
        bn: BatchNorm2d::new(base_width),
        conv2: Conv2d::new(base_width, 1, 3, 2, 1, true, &mut rng),
    })
}

impl<E: Element> Discriminator<E> {
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// `[B,C,H,W]` feature map to `[B]` scores.
    pub fn forward(&mut self, feature: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        match *feature.shape() {
            [_, c, h, w] if c == self.in_channels && h >= MIN_SPATIAL && w >= MIN_SPATIAL => {}
            ref s => {
                return Err(Error::dim(
                    "discriminator",
                    format!(
                        "feature {s:?}: need {} channels and spatial extent >= {MIN_SPATIAL}",
                        self.in_channels
                    ),
                ))
            }
        }
        let batch = feature.shape()[0];
        let h = self.conv1.forward(feature, pass)?;
        let h = self.bn.forward(&h, pass)?;
        let h = ops::activation(Activation::LeakyRelu(LEAKY_SLOPE), &h)?;
        let h = self.conv2.forward(&h, pass)?;
        let h = ops::global_avg_pool(&h)?;
        ops::sigmoid(&h)?.reshape(vec![batch])
    }
}

impl<E: Element> Module<E> for Discriminator<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        let mut v: Vec<_> = prefixed("conv1", self.conv1.params()).collect();
        v.extend(prefixed("bn", self.bn.params()));
        v.extend(prefixed("conv2", self.conv2.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut v: Vec<_> = prefixed("conv1", self.conv1.params_mut()).collect();
        v.extend(prefixed("bn", self.bn.params_mut()));
        v.extend(prefixed("conv2", self.conv2.params_mut()));
        v
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        prefixed("bn", self.bn.stats_mut()).collect()
    }
}
