//! Momentum SGD, Adam and the multi-step learning-rate schedule.
//!
//! Optimizer state is keyed by parameter name so it can be written to and
//! restored from checkpoints.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Param};

/// `base_lr · factor^k` where `k` counts milestones `<= epoch`.
pub fn lr_at(epoch: usize, base_lr: f64, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * factor.powi(passed as i32)
}

/// Ascending milestones with a decay factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStep {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl MultiStep {
    pub fn new(base_lr: f64, milestones: Vec<usize>, factor: f64) -> Result<Self> {
        if milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(format!(
                "milestones must be ascending: {milestones:?}"
            )));
        }
        if !(base_lr >= 0.0) || !(factor > 0.0) {
            return Err(Error::Config(format!(
                "invalid schedule: lr {base_lr}, factor {factor}"
            )));
        }
        Ok(Self {
            base_lr,
            milestones,
            factor,
        })
    }

    pub fn at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.base_lr, &self.milestones, self.factor)
    }
}

fn grad_of<E: Element>(name: &str, p: &Param<E>) -> Result<Option<Vec<E>>> {
    let g = p.grad().clone();
    if let Some(g) = &g {
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::State(format!("non-finite gradient for {name}")));
        }
    }
    Ok(g)
}

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Sgd<E: Element = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Vec<E>>,
}

impl<E: Element> Sgd<E> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// Updates every parameter that holds a gradient; others are skipped.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Param<E>)>,
        lr: f64,
    ) -> Result<()> {
        let (lr, mu, wd) = (
            E::from_f64_lossy(lr),
            E::from_f64_lossy(self.momentum),
            E::from_f64_lossy(self.weight_decay),
        );
        for (name, p) in params {
            let Some(g) = grad_of(&name, p)? else {
                continue;
            };
            let buf = self
                .buffers
                .entry(name)
                .or_insert_with(|| vec![E::zero(); g.len()]);
            let next: Vec<E> = p
                .value()
                .data()
                .iter()
                .zip(&g)
                .zip(buf.iter_mut())
                .map(|((&w, &g), b)| {
                    *b = mu * *b + (g + wd * w);
                    w - lr * *b
                })
                .collect();
            p.set_data(next)?;
        }
        Ok(())
    }

    pub fn state(&self) -> Vec<(String, Vec<E>)> {
        self.buffers
            .iter()
            .map(|(k, v)| (format!("{k}.momentum"), v.clone()))
            .collect()
    }

    pub fn load_state(&mut self, entries: &BTreeMap<String, Vec<E>>) {
        self.buffers.clear();
        for (k, v) in entries {
            if let Some(name) = k.strip_suffix(".momentum") {
                self.buffers.insert(name.to_string(), v.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AdamSlot<E> {
    m: Vec<E>,
    v: Vec<E>,
    step: u32,
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam<E: Element = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    slots: BTreeMap<String, AdamSlot<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            slots: BTreeMap::new(),
        }
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Param<E>)>,
        lr: f64,
    ) -> Result<()> {
        let f = E::from_f64_lossy;
        let (b1, b2, wd, eps) = (f(self.beta1), f(self.beta2), f(self.weight_decay), f(self.eps));
        for (name, p) in params {
            let Some(g) = grad_of(&name, p)? else {
                continue;
            };
            let slot = self.slots.entry(name).or_insert_with(|| AdamSlot {
                m: vec![E::zero(); g.len()],
                v: vec![E::zero(); g.len()],
                step: 0,
            });
            slot.step += 1;
            let c1 = E::one() - b1.powi(slot.step as i32);
            let c2 = E::one() - b2.powi(slot.step as i32);
            let lr = f(lr);
            let next: Vec<E> = p
                .value()
                .data()
                .iter()
                .zip(&g)
                .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
                .map(|((&w, &g), (m, v))| {
                    let g = g + wd * w;
                    *m = b1 * *m + (E::one() - b1) * g;
                    *v = b2 * *v + (E::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    w - lr * m_hat / (v_hat.sqrt() + eps)
                })
                .collect();
            p.set_data(next)?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn state(&self) -> Vec<(String, Vec<E>)> {
        let mut out = Vec::with_capacity(self.slots.len() * 3);
        for (k, s) in &self.slots {
            out.push((format!("{k}.m"), s.m.clone()));
            out.push((format!("{k}.v"), s.v.clone()));
            out.push((format!("{k}.step"), vec![E::from_u32(s.step).unwrap()]));
        }
        out
    }

    pub fn load_state(&mut self, entries: &BTreeMap<String, Vec<E>>) -> Result<()> {
        self.slots.clear();
        for (k, m) in entries {
            let Some(name) = k.strip_suffix(".m") else {
                continue;
            };
            let get = |suffix: &str| {
                entries.get(&format!("{name}.{suffix}")).ok_or_else(|| {
                    Error::State(format!("adam state for {name} lacks `{suffix}`"))
                })
            };
            let v = get("v")?.clone();
            let step = get("step")?
                .first()
                .and_then(|s| s.to_u32())
                .ok_or_else(|| Error::State(format!("bad adam step for {name}")))?;
            self.slots.insert(
                name.to_string(),
                AdamSlot {
                    m: m.clone(),
                    v,
                    step,
                },
            );
        }
        Ok(())
    }
}
