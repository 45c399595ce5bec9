use super::layers::{BatchNorm2d, Conv2d};
use super::{prefixed, Module, Pass};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::ops::{self, RunningStats};
use crate::tensor::{Element, Param, Tensor};

/// 1×1 conv, batch norm, ReLU: converts a feature map's channel count.
#[derive(Debug, Clone)]
pub struct TransferLayer<E: Element = f32> {
    conv: Conv2d<E>,
    bn: BatchNorm2d<E>,
}

/// Channel adapter on a knowledge-flow edge; identity when widths agree.
#[derive(Debug, Clone)]
pub enum Transfer<E: Element = f32> {
    Identity,
    Adapter(TransferLayer<E>),
}

pub fn build_transfer_layer<E: Element>(c_in: usize, c_out: usize, seed: u64) -> Result<Transfer<E>> {
    if c_in == 0 || c_out == 0 {
        return Err(Error::Config("transfer layer needs positive channel counts".into()));
    }
    if c_in == c_out {
        return Ok(Transfer::Identity);
    }
    let mut rng = rng::stream(seed, "transfer", 0);
    Ok(Transfer::Adapter(TransferLayer {
        conv: Conv2d::new(c_in, c_out, 1, 1, 0, false, &mut rng),
        bn: BatchNorm2d::new(c_out),
    }))
}

impl<E: Element> Transfer<E> {
    pub fn is_identity(&self) -> bool {
        matches!(self, Transfer::Identity)
    }

    pub fn forward(&mut self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        match self {
            Transfer::Identity => Ok(x.clone()),
            Transfer::Adapter(t) => {
                let h = t.conv.forward(x, pass)?;
                let h = t.bn.forward(&h, pass)?;
                ops::relu(&h)
            }
        }
    }
}

impl<E: Element> Module<E> for Transfer<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        match self {
            Transfer::Identity => Vec::new(),
            Transfer::Adapter(t) => {
                let mut v: Vec<_> = prefixed("conv", t.conv.params()).collect();
                v.extend(prefixed("bn", t.bn.params()));
                v
            }
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        match self {
            Transfer::Identity => Vec::new(),
            Transfer::Adapter(t) => {
                let mut v: Vec<_> = prefixed("conv", t.conv.params_mut()).collect();
                v.extend(prefixed("bn", t.bn.params_mut()));
                v
            }
        }
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        match self {
            Transfer::Identity => Vec::new(),
            Transfer::Adapter(t) => prefixed("bn", t.bn.stats_mut()).collect(),
        }
    }
}
