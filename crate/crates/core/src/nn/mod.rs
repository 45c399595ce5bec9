//! Parameterized building blocks: feature extractors with classifier heads,
//! discriminators and channel-adapting transfer layers.

mod arch;
mod discriminator;
mod layers;
mod network;
mod transfer;

pub use arch::{parse_arch, preset, Block, PRESETS};
pub use discriminator::{build_discriminator, Discriminator, MIN_SPATIAL};
pub use layers::{BatchNorm2d, Conv2d, Layer, Linear, BN_EPS, BN_MOMENTUM};
pub use network::{build_network, InputShape, Network};
pub use transfer::{build_transfer_layer, Transfer, TransferLayer};

use crate::tensor::ops::{BnMode, RunningStats};
use crate::tensor::{Element, Param, Tape, Tensor};

/// How a forward pass treats parameters and batch-norm state.
#[derive(Clone, Copy)]
pub struct Pass<'t, E: Element> {
    tape: Option<&'t Tape<E>>,
    train: bool,
    update_stats: bool,
    frozen: bool,
}

impl<'t, E: Element> Pass<'t, E> {
    /// Batch statistics, running-stat updates, parameters on `tape`.
    pub fn train(tape: &'t Tape<E>) -> Self {
        Self {
            tape: Some(tape),
            train: true,
            update_stats: true,
            frozen: false,
        }
    }

    /// Running statistics, nothing recorded.
    pub fn eval() -> Self {
        Self {
            tape: None,
            train: false,
            update_stats: false,
            frozen: false,
        }
    }

    /// Running statistics with parameters recorded on `tape`.
    pub fn eval_on(tape: &'t Tape<E>) -> Self {
        Self {
            tape: Some(tape),
            train: false,
            update_stats: false,
            frozen: false,
        }
    }

    /// Parameters enter as constants: gradients still flow through the
    /// inputs but never reach this module's parameters.
    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Leaves running statistics untouched in train mode.
    pub fn keep_stats(mut self) -> Self {
        self.update_stats = false;
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn bn_mode(&self) -> BnMode {
        if self.train {
            BnMode::Train
        } else {
            BnMode::Eval
        }
    }

    pub fn bind(&self, p: &Param<E>) -> Tensor<E> {
        match self.tape {
            Some(tape) if !self.frozen => tape.param(p),
            _ => p.value().clone(),
        }
    }

    /// Attaches an input to the tape when one is present, so gradients with
    /// respect to it can be read back.
    pub fn watch(&self, x: &Tensor<E>) -> Tensor<E> {
        match self.tape {
            Some(tape) if !x.requires_grad() => tape.watch(x),
            _ => x.clone(),
        }
    }

    pub(crate) fn stats<'s>(&self, stats: &'s mut RunningStats<E>) -> Option<&'s mut RunningStats<E>> {
        if !self.train || self.update_stats {
            Some(stats)
        } else {
            None
        }
    }
}

/// Named access to a module's trainable parameters and batch-norm state.
pub trait Module<E: Element> {
    fn params(&self) -> Vec<(String, &Param<E>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param<E>)>;
    fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<E>)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

pub(crate) fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> std::vec::IntoIter<(String, T)> {
    items
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect::<Vec<_>>()
        .into_iter()
}
