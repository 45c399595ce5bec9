//! Moving trainer state in and out of checkpoints.
//!
//! Entry names: `net{k}.<param>`, `net{k}.<bn>.running.{mean,var}`,
//! `edge{e}.transfer.*`, `edge{e}.disc.*`, `opt.sgd.*`, `opt.adam.*`,
//! `meta.epoch`, `data.mean`, `data.std`.

use std::collections::BTreeMap;

use super::Trainer;
use crate::checkpoint::Checkpoint;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::nn::Module;

pub(crate) fn save_module<M: Module<f32>>(ck: &mut Checkpoint, prefix: &str, m: &mut M) {
    for (name, p) in m.params() {
        ck.insert(format!("{prefix}.{name}"), p.shape().to_vec(), p.value().to_vec());
    }
    for (name, st) in m.stats_mut() {
        ck.insert(format!("{prefix}.{name}.mean"), vec![st.mean.len()], st.mean.clone());
        ck.insert(format!("{prefix}.{name}.var"), vec![st.var.len()], st.var.clone());
    }
}

pub(crate) fn load_module<M: Module<f32>>(ck: &Checkpoint, prefix: &str, m: &mut M) -> Result<()> {
    for (name, p) in m.params_mut() {
        let key = format!("{prefix}.{name}");
        let e = ck.require(&key)?;
        if e.dims != p.shape() {
            return Err(Error::State(format!(
                "`{key}`: checkpoint shape {:?}, model shape {:?}",
                e.dims,
                p.shape()
            )));
        }
        p.set_data(e.values.clone())?;
    }
    for (name, st) in m.stats_mut() {
        for (suffix, slot) in [("mean", &mut st.mean), ("var", &mut st.var)] {
            let key = format!("{prefix}.{name}.{suffix}");
            let e = ck.require(&key)?;
            if e.values.len() != slot.len() {
                return Err(Error::State(format!(
                    "`{key}`: {} values, expected {}",
                    e.values.len(),
                    slot.len()
                )));
            }
            slot.clone_from(&e.values);
        }
    }
    Ok(())
}

fn insert_state(ck: &mut Checkpoint, prefix: &str, state: Vec<(String, Vec<f32>)>) {
    for (name, v) in state {
        ck.insert(format!("{prefix}.{name}"), vec![v.len()], v);
    }
}

impl Trainer {
    /// Full state after `epoch` completed epochs.
    pub fn to_checkpoint(&mut self, epoch: usize, data: &Standardizer) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let plan = &mut self.plan;
        for (k, net) in plan.nets.iter_mut().enumerate() {
            save_module(&mut ck, &format!("net{k}"), net);
        }
        for (e, t) in plan.transfers.iter_mut().enumerate() {
            save_module(&mut ck, &format!("edge{e}.transfer"), t);
        }
        for (e, d) in plan.discriminators.iter_mut().enumerate() {
            save_module(&mut ck, &format!("edge{e}.disc"), d);
        }
        insert_state(&mut ck, "opt.sgd", self.sgd.state());
        insert_state(&mut ck, "opt.adam", self.adam.state());
        ck.insert_scalar("meta.epoch", epoch as f32);
        ck.insert("data.mean", vec![data.mean.len()], data.mean.clone());
        ck.insert("data.std", vec![data.std.len()], data.std.clone());
        ck
    }

    /// Restores networks, per-edge modules and both optimizers. Returns the
    /// number of completed epochs and the stored data statistics.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(usize, Standardizer)> {
        let plan = &mut self.plan;
        for (k, net) in plan.nets.iter_mut().enumerate() {
            load_module(ck, &format!("net{k}"), net)?;
        }
        for (e, t) in plan.transfers.iter_mut().enumerate() {
            load_module(ck, &format!("edge{e}.transfer"), t)?;
        }
        for (e, d) in plan.discriminators.iter_mut().enumerate() {
            load_module(ck, &format!("edge{e}.disc"), d)?;
        }
        let sgd: BTreeMap<_, _> = ck.with_prefix("opt.sgd");
        self.sgd.load_state(&sgd);
        self.adam.load_state(&ck.with_prefix("opt.adam"))?;
        let epoch = ck.scalar("meta.epoch")?;
        if !(epoch >= 0.0 && epoch.fract() == 0.0) {
            return Err(Error::State(format!("bad meta.epoch {epoch}")));
        }
        let data = Standardizer {
            mean: ck.require("data.mean")?.values.clone(),
            std: ck.require("data.std")?.values.clone(),
        };
        Ok((epoch as usize, data))
    }
}
