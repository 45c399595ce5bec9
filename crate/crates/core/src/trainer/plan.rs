use std::fmt;

use crate::data::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::nn::{
    build_discriminator, build_network, build_transfer_layer, Discriminator, InputShape, Network,
    Transfer, MIN_SPATIAL,
};
use crate::rng;

/// Knowledge-flow edge: `src` teaches `dst`.
///
/// On an adversarial edge the discriminator belongs to `dst`; it scores the
/// feature map of `src` as real and the (transferred) map of `dst` as fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl fmt::Display for Edge {
    /// One-based, as in `1->2`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src + 1, self.dst + 1)
    }
}

/// Two networks teach each other; three or more form a one-way cycle
/// `0→1→…→K−1→0`.
pub fn topology(k: usize) -> Vec<Edge> {
    match k {
        0 | 1 => Vec::new(),
        2 => vec![Edge { src: 0, dst: 1 }, Edge { src: 1, dst: 0 }],
        _ => (0..k).map(|i| Edge { src: i, dst: (i + 1) % k }).collect(),
    }
}

/// Networks, edges and the per-edge modules of one co-training run.
#[derive(Debug, Clone)]
pub struct DistillPlan {
    pub method: Method,
    pub nets: Vec<Network>,
    pub edges: Vec<Edge>,
    /// One per edge for `afd`, empty otherwise.
    pub discriminators: Vec<Discriminator>,
    /// One per edge for feature-aligning methods (identity where channel
    /// counts agree), empty otherwise. Maps `dst` features to `src` width.
    pub transfers: Vec<Transfer>,
    pub temperature: f32,
    /// `false` turns `afd` into its logit-only ablation.
    pub adversarial: bool,
}

impl DistillPlan {
    pub fn k(&self) -> usize {
        self.nets.len()
    }

    /// Indices of the edges ending at network `k`.
    pub fn incoming(&self, k: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].dst == k).collect()
    }

    /// Whether network `k` is optimized (the offline teacher is not).
    pub fn trainable(&self, k: usize) -> bool {
        !(self.method == Method::L1KdOffline && k == 1)
    }

    /// Number of non-identity transfer layers.
    pub fn transfer_layer_count(&self) -> usize {
        self.transfers.iter().filter(|t| !t.is_identity()).count()
    }

    /// Whether the adversarial phase runs.
    pub fn has_adversarial_phase(&self) -> bool {
        self.method == Method::Afd && self.adversarial
    }
}

/// Builds networks and edges for `config`.
///
/// For `l1_kd_offline` the second network is the teacher: its state is
/// read from `teacher_checkpoint` (entries `net0.*` of a single-network
/// run) and it is never updated.
pub fn build_plan(config: &RunConfig, input: InputShape, num_classes: usize) -> Result<DistillPlan> {
    config.validate()?;
    let k = config.nets;
    let mut nets = Vec::with_capacity(k);
    for i in 0..k {
        nets.push(build_network(
            config.arch(i),
            input,
            num_classes,
            rng::derive_seed(config.seed, "net", i as u64),
        )?);
    }
    let edges = match config.method {
        Method::Afd | Method::Dml | Method::L1 | Method::L1Kd => topology(k),
        Method::L1KdOffline => vec![Edge { src: 1, dst: 0 }],
        Method::KdEnsemble | Method::Vanilla => Vec::new(),
    };

    let mut transfers = Vec::new();
    if config.method.uses_features() {
        for (e, edge) in edges.iter().enumerate() {
            let [c_src, h_src, w_src] = nets[edge.src].feature_shape();
            let [c_dst, h_dst, w_dst] = nets[edge.dst].feature_shape();
            if (h_src, w_src) != (h_dst, w_dst) {
                return Err(Error::Config(format!(
                    "edge {edge}: feature maps {h_src}x{w_src} and {h_dst}x{w_dst} differ in spatial extent"
                )));
            }
            transfers.push(build_transfer_layer(
                c_dst,
                c_src,
                rng::derive_seed(config.seed, "transfer", e as u64),
            )?);
        }
    }

    let mut discriminators = Vec::new();
    if config.method == Method::Afd {
        for (e, edge) in edges.iter().enumerate() {
            let [c, h, w] = nets[edge.src].feature_shape();
            if h < MIN_SPATIAL || w < MIN_SPATIAL {
                return Err(Error::Config(format!(
                    "edge {edge}: {h}x{w} feature map is below the discriminator minimum {MIN_SPATIAL}"
                )));
            }
            discriminators.push(build_discriminator(
                c,
                config.disc_width,
                rng::derive_seed(config.seed, "disc", e as u64),
            )?);
        }
    }

    let mut plan = DistillPlan {
        method: config.method,
        nets,
        edges,
        discriminators,
        transfers,
        temperature: config.temperature as f32,
        adversarial: config.adversarial,
    };
    if config.method == Method::L1KdOffline {
        let path = config
            .teacher_checkpoint
            .as_ref()
            .ok_or_else(|| Error::Config("l1_kd_offline requires teacher_checkpoint".into()))?;
        let ck = crate::checkpoint::Checkpoint::load(path)?;
        super::state::load_module(&ck, "net0", &mut plan.nets[1])?;
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_edges() {
        let e = topology(4);
        assert_eq!(e.len(), 4);
        assert_eq!(e[3], Edge { src: 3, dst: 0 });
        assert_eq!(e[0].to_string(), "1->2");
        assert_eq!(topology(2).len(), 2);
        assert!(topology(1).is_empty());
    }
}
