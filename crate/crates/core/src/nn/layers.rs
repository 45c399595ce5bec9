use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{prefixed, Module, Pass};
use crate::error::Result;
use crate::tensor::ops::{self, Activation, RunningStats};
use crate::tensor::{Element, Param, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Normal weights with std `sqrt(2 / fan_in)`.
fn he_normal<E: Element>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Param<E> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..n).map(|_| E::from_f64_lossy(dist.sample(rng))).collect();
    Param::new(Tensor::new(shape, data).expect("matching length"))
}

#[derive(Debug, Clone)]
pub struct Conv2d<E: Element = f32> {
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Element> Conv2d<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: he_normal(vec![c_out, c_in, kernel, kernel], fan_in, rng),
            bias: bias.then(|| Param::new(Tensor::zeros(vec![c_out]))),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        let w = pass.bind(&self.weight);
        let b = self.bias.as_ref().map(|b| pass.bind(b));
        ops::conv2d(x, &w, b.as_ref(), self.stride, self.padding)
    }
}

impl<E: Element> Module<E> for Conv2d<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        let mut v = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        let mut v = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            v.push(("bias".to_string(), b));
        }
        v
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<E: Element = f32> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub stats: RunningStats<E>,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(vec![channels], E::one())),
            beta: Param::new(Tensor::zeros(vec![channels])),
            stats: RunningStats::new(channels, E::from_f64_lossy(BN_MOMENTUM)),
        }
    }

    pub fn forward(&mut self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        let g = pass.bind(&self.gamma);
        let b = pass.bind(&self.beta);
        ops::batch_norm(
            x,
            &g,
            &b,
            E::from_f64_lossy(BN_EPS),
            pass.bn_mode(),
            pass.stats(&mut self.stats),
        )
    }
}

impl<E: Element> Module<E> for BatchNorm2d<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        vec![("running".into(), &mut self.stats)]
    }
}

#[derive(Debug, Clone)]
pub struct Linear<E: Element = f32> {
    pub weight: Param<E>,
    pub bias: Param<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(f_in: usize, f_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: he_normal(vec![f_out, f_in], f_in, rng),
            bias: Param::new(Tensor::zeros(vec![f_out])),
        }
    }

    pub fn forward(&self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        ops::linear(x, &pass.bind(&self.weight), &pass.bind(&self.bias))
    }
}

impl<E: Element> Module<E> for Linear<E> {
    fn params(&self) -> Vec<(String, &Param<E>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)> {
        Vec::new()
    }
}

/// One instantiated extractor block.
#[derive(Debug, Clone)]
pub enum Layer<E: Element = f32> {
    Conv(Conv2d<E>),
    Bn(BatchNorm2d<E>),
    Relu,
    MaxPool(usize),
}

impl<E: Element> Layer<E> {
    pub fn forward(&mut self, x: &Tensor<E>, pass: &Pass<'_, E>) -> Result<Tensor<E>> {
        match self {
            Layer::Conv(c) => c.forward(x, pass),
            Layer::Bn(bn) => bn.forward(x, pass),
            Layer::Relu => ops::activation(Activation::Relu, x),
            Layer::MaxPool(k) => ops::max_pool2d(x, *k),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Bn(_) => "bn",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "pool",
        }
    }
}

/// Parameter and statistics names for an ordered layer list.
pub(crate) fn layer_params<'a, E: Element>(
    prefix: &str,
    layers: &'a [Layer<E>],
) -> Vec<(String, &'a Param<E>)> {
    let mut out = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let p = format!("{prefix}.{i}.{}", l.kind());
        match l {
            Layer::Conv(c) => out.extend(prefixed(&p, c.params())),
            Layer::Bn(b) => out.extend(prefixed(&p, b.params())),
            _ => {}
        }
    }
    out
}

pub(crate) fn layer_params_mut<'a, E: Element>(
    prefix: &str,
    layers: &'a mut [Layer<E>],
) -> Vec<(String, &'a mut Param<E>)> {
    let mut out = Vec::new();
    for (i, l) in layers.iter_mut().enumerate() {
        let p = format!("{prefix}.{i}.{}", l.kind());
        match l {
            Layer::Conv(c) => out.extend(prefixed(&p, c.params_mut())),
            Layer::Bn(b) => out.extend(prefixed(&p, b.params_mut())),
            _ => {}
        }
    }
    out
}

pub(crate) fn layer_stats_mut<'a, E: Element>(
    prefix: &str,
    layers: &'a mut [Layer<E>],
) -> Vec<(String, &'a mut RunningStats<E>)> {
    let mut out = Vec::new();
    for (i, l) in layers.iter_mut().enumerate() {
        if let Layer::Bn(b) = l {
            out.extend(prefixed(&format!("{prefix}.{i}.bn"), b.stats_mut()));
        }
    }
    out
}
