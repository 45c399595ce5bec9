//! Co-training: topology, the two-phase distillation step, the baseline
//! methods, evaluation with ensembling, and the epoch loop.
//!
//! Every method runs one forward pass per network per batch on a shared
//! tape, except `dml`, which re-runs each updated network to produce the
//! fresh logits its successor learns from.

mod eval;
mod plan;
mod run;
pub(crate) mod state;

pub use eval::{argmax, ensemble_predict, evaluate, EvalReport, EVAL_BATCH};
pub use plan::{build_plan, topology, DistillPlan, Edge};
pub use run::{checkpoint_path, restore, run_experiment, RunSummary, CSV_HEADER};

use crate::data::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{prefixed, InputShape, Module, Pass};
use crate::optim::{Adam, MultiStep, Sgd};
use crate::tensor::ops;
use crate::tensor::{Param, Tape, Tensor};

/// Per-network losses of one batch. `g` holds the feature-level loss
/// (generator loss for `afd`, L1 alignment for the `l1*` methods) and `d`
/// the loss of the discriminator owned by the network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetLosses {
    pub ce: f64,
    pub kl: f64,
    pub g: f64,
    pub d: f64,
}

/// Losses and training-mode predictions of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub losses: Vec<NetLosses>,
    pub predictions: Vec<Vec<usize>>,
    pub ensemble: Vec<usize>,
}

impl StepRecord {
    fn new(logits: &[Tensor]) -> Result<Self> {
        Ok(Self {
            losses: vec![NetLosses::default(); logits.len()],
            predictions: logits.iter().map(argmax).collect::<Result<_>>()?,
            ensemble: ensemble_predict(&logits.iter().collect::<Vec<_>>())?,
        })
    }

    /// Whether every recorded loss is finite.
    pub fn is_finite(&self) -> bool {
        self.losses
            .iter()
            .all(|l| [l.ce, l.kl, l.g, l.d].iter().all(|v| v.is_finite()))
    }
}

/// A plan together with its two optimizers and schedules.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub plan: DistillPlan,
    /// Logit phase (and the single phase of the baselines).
    pub sgd: Sgd,
    /// Adversarial phase.
    pub adam: Adam,
    pub logit_schedule: MultiStep,
    pub adv_schedule: MultiStep,
}

fn item(t: &Tensor) -> Result<f64> {
    Ok(f64::from(t.item()?))
}

fn add_opt(acc: Option<Tensor>, t: Tensor) -> Result<Option<Tensor>> {
    Ok(Some(match acc {
        None => t,
        Some(a) => ops::add(&a, &t)?,
    }))
}

/// Mean of scalar tensors; `None` for an empty list.
fn mean_of(terms: Vec<Tensor>) -> Result<Option<Tensor>> {
    let n = terms.len();
    let mut acc = None;
    for t in terms {
        acc = add_opt(acc, t)?;
    }
    match acc {
        Some(s) if n > 1 => Ok(Some(ops::scale(&s, 1.0 / n as f32)?)),
        other => Ok(other),
    }
}

/// `log` of the mean softened distribution of all networks, detached.
fn ensemble_target(logits: &[Tensor], t: f32) -> Result<Tensor> {
    let k = logits.len() as f32;
    let mut mean = vec![0.0f32; logits[0].len()];
    for z in logits {
        let p = losses::softened_softmax(&z.detach(), t)?.probs;
        for (m, v) in mean.iter_mut().zip(p.data()) {
            *m += v / k;
        }
    }
    Tensor::new(logits[0].shape().to_vec(), mean.into_iter().map(f32::ln).collect())
}

/// Cross-entropy and the logit-level distillation term of network `k`.
///
/// `teachers[j]` is the logit network `j` teaches with; `own` is network
/// `k`'s tracked logit.
fn logit_terms(
    plan: &DistillPlan,
    k: usize,
    own: &Tensor,
    teachers: &[Tensor],
    ensemble: Option<&Tensor>,
    labels: &[usize],
) -> Result<(Tensor, Option<Tensor>)> {
    let ce = losses::cross_entropy(labels, own)?;
    let t = plan.temperature;
    let kl = match plan.method {
        Method::Vanilla | Method::L1 => None,
        Method::KdEnsemble => {
            let target = ensemble.ok_or_else(|| Error::Usage("missing ensemble target".into()))?;
            Some(losses::kl_to_target(target, own, t)?)
        }
        _ => mean_of(
            plan.incoming(k)
                .into_iter()
                .map(|e| losses::kl_mimicry(&teachers[plan.edges[e].src], own, t))
                .collect::<Result<_>>()?,
        )?,
    };
    Ok((ce, kl))
}

/// L1 distance from network `k`'s transferred features to each teacher's.
fn l1_term(plan: &mut DistillPlan, k: usize, feats: &[Tensor], pass: &Pass<'_, f32>) -> Result<Option<Tensor>> {
    if !matches!(plan.method, Method::L1 | Method::L1Kd | Method::L1KdOffline) {
        return Ok(None);
    }
    let mut terms = Vec::new();
    for e in plan.incoming(k) {
        let src = plan.edges[e].src;
        let own = plan.transfers[e].forward(&feats[k], pass)?;
        terms.push(losses::l1_alignment(&own, &feats[src])?);
    }
    mean_of(terms)
}

/// Discriminator and generator losses of every edge.
///
/// The discriminator scores the detached teacher map and the detached,
/// transferred student map; the generator loss re-scores the live student
/// map with the discriminator's parameters frozen and its running
/// statistics untouched, which reproduces the discriminator's own score of
/// that batch exactly while routing gradient only to the student side.
fn adversarial_terms(
    plan: &mut DistillPlan,
    feats: &[Tensor],
    pass: &Pass<'_, f32>,
) -> Result<Vec<(Tensor, Tensor)>> {
    let mut out = Vec::with_capacity(plan.edges.len());
    for e in 0..plan.edges.len() {
        let edge = plan.edges[e];
        let fake = plan.transfers[e].forward(&feats[edge.dst], pass)?;
        let d = &mut plan.discriminators[e];
        let d_real = d.forward(&feats[edge.src].detach(), pass)?;
        let d_fake = d.forward(&fake.detach(), pass)?;
        let loss_d = losses::lsgan_d_loss(&d_real, &d_fake)?;
        let d_fake_live = d.forward(&fake, &pass.frozen().keep_stats())?;
        let loss_g = losses::lsgan_g_loss(&d_fake_live)?;
        out.push((loss_d, loss_g));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NetPart {
    Nothing,
    Extractor,
    Everything,
}

/// Named parameters of the selected parts of a plan. Names match the
/// checkpoint layout (`net{k}.…`, `edge{e}.transfer.…`, `edge{e}.disc.…`).
/// Frozen networks are never included.
fn collect_params(
    plan: &mut DistillPlan,
    nets: NetPart,
    transfers: bool,
    discs: bool,
) -> Vec<(String, &mut Param)> {
    let trainable: Vec<bool> = (0..plan.k()).map(|k| plan.trainable(k)).collect();
    let mut out = Vec::new();
    for (k, net) in plan.nets.iter_mut().enumerate() {
        let prefix = format!("net{k}");
        match nets {
            _ if !trainable[k] => {}
            NetPart::Nothing => {}
            NetPart::Extractor => out.extend(prefixed(&prefix, net.extractor_params_mut())),
            NetPart::Everything => out.extend(prefixed(&prefix, net.params_mut())),
        }
    }
    if transfers {
        for (e, t) in plan.transfers.iter_mut().enumerate() {
            out.extend(prefixed(&format!("edge{e}.transfer"), t.params_mut()));
        }
    }
    if discs {
        for (e, d) in plan.discriminators.iter_mut().enumerate() {
            out.extend(prefixed(&format!("edge{e}.disc"), d.params_mut()));
        }
    }
    out
}

impl Trainer {
    pub fn new(config: &RunConfig, input: InputShape, num_classes: usize) -> Result<Self> {
        let plan = build_plan(config, input, num_classes)?;
        Ok(Self {
            plan,
            sgd: Sgd::new(config.momentum, config.weight_decay_logit),
            adam: Adam::new(config.adv_beta1, config.adv_beta2, config.weight_decay_adv),
            logit_schedule: MultiStep::new(config.lr_logit, config.milestones_logit.clone(), config.lr_factor)?,
            adv_schedule: MultiStep::new(config.lr_adv, config.milestones_adv.clone(), config.lr_factor)?,
        })
    }

    /// One optimization step at the learning rates of `epoch` (0-based).
    pub fn step(&mut self, x: &Tensor, labels: &[usize], epoch: usize) -> Result<StepRecord> {
        let lr_logit = self.logit_schedule.at(epoch);
        match self.plan.method {
            Method::Afd => self.afd_train_step(x, labels, lr_logit, self.adv_schedule.at(epoch)),
            _ => self.baseline_train_step(x, labels, lr_logit),
        }
    }

    fn forward_all(&mut self, x: &Tensor, pass: &Pass<'_, f32>) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let k = self.plan.k();
        let (mut feats, mut logits) = (Vec::with_capacity(k), Vec::with_capacity(k));
        for i in 0..k {
            let trainable = self.plan.trainable(i);
            let net = &mut self.plan.nets[i];
            let (f, z) = if trainable {
                net.forward(x, pass)?
            } else {
                net.forward(x, &Pass::eval())?
            };
            feats.push(f);
            logits.push(z);
        }
        Ok((feats, logits))
    }

    /// Clears every gradient accumulator in the plan.
    pub fn zero_grad(&self) {
        for net in &self.plan.nets {
            net.zero_grad();
        }
        for t in &self.plan.transfers {
            t.zero_grad();
        }
        for d in &self.plan.discriminators {
            d.zero_grad();
        }
    }

    /// Adversarial feature-map distillation step.
    ///
    /// One forward pass per network. Phase A: the summed logit losses
    /// (cross-entropy plus mean mimicry over incoming edges) are
    /// back-propagated once and every network takes a synchronous SGD step.
    /// Phase B reuses the same forward outputs: discriminators take an Adam
    /// step on their losses, then extractors and transfer layers take an
    /// Adam step on the generator losses. Classifier heads are untouched by
    /// phase B.
    pub fn afd_train_step(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        lr_logit: f64,
        lr_adv: f64,
    ) -> Result<StepRecord> {
        if self.plan.method != Method::Afd {
            return Err(Error::Usage(format!("afd step on a {} plan", self.plan.method)));
        }
        let tape = Tape::new();
        let pass = Pass::train(&tape);
        let (feats, logits) = self.forward_all(x, &pass)?;
        let mut rec = StepRecord::new(&logits)?;
        let teachers: Vec<Tensor> = logits.iter().map(Tensor::detach).collect();

        let mut total = None;
        for k in 0..self.plan.k() {
            let (ce, kl) = logit_terms(&self.plan, k, &logits[k], &teachers, None, labels)?;
            rec.losses[k].ce = item(&ce)?;
            let mut l = ce;
            if let Some(kl) = kl {
                rec.losses[k].kl = item(&kl)?;
                l = ops::add(&l, &kl)?;
            }
            total = add_opt(total, l)?;
        }
        let total = total.ok_or_else(|| Error::Usage("plan has no networks".into()))?;
        tape.backward(&total)?;
        self.sgd.step(collect_params(&mut self.plan, NetPart::Everything, false, false), lr_logit)?;
        self.zero_grad();

        if self.plan.has_adversarial_phase() {
            let terms = adversarial_terms(&mut self.plan, &feats, &pass)?;
            let (mut sum_d, mut sum_g) = (None, None);
            for (e, (ld, lg)) in terms.into_iter().enumerate() {
                let dst = self.plan.edges[e].dst;
                rec.losses[dst].d += item(&ld)?;
                rec.losses[dst].g += item(&lg)?;
                sum_d = add_opt(sum_d, ld)?;
                sum_g = add_opt(sum_g, lg)?;
            }
            if let (Some(sum_d), Some(sum_g)) = (sum_d, sum_g) {
                tape.backward(&sum_d)?;
                self.adam.step(collect_params(&mut self.plan, NetPart::Nothing, false, true), lr_adv)?;
                self.zero_grad();

                tape.backward(&sum_g)?;
                self.adam.step(collect_params(&mut self.plan, NetPart::Extractor, true, false), lr_adv)?;
                self.zero_grad();
            }
        }
        Ok(rec)
    }

    /// One step of a baseline method (`dml`, `kd_ensemble`, `l1`, `l1_kd`,
    /// `l1_kd_offline`, `vanilla`).
    pub fn baseline_train_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepRecord> {
        match self.plan.method {
            Method::Afd => Err(Error::Usage("baseline step on an afd plan".into())),
            Method::Dml => self.dml_step(x, labels, lr),
            _ => self.joint_step(x, labels, lr),
        }
    }

    /// Sums every trainable network's loss and takes one SGD step over the
    /// networks and transfer layers.
    fn joint_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepRecord> {
        let tape = Tape::new();
        let pass = Pass::train(&tape);
        let (feats, logits) = self.forward_all(x, &pass)?;
        let mut rec = StepRecord::new(&logits)?;
        let teachers: Vec<Tensor> = logits.iter().map(Tensor::detach).collect();
        let ensemble = match self.plan.method {
            Method::KdEnsemble => Some(ensemble_target(&logits, self.plan.temperature)?),
            _ => None,
        };
        let mut total = None;
        for k in 0..self.plan.k() {
            if !self.plan.trainable(k) {
                continue;
            }
            let (ce, kl) = logit_terms(&self.plan, k, &logits[k], &teachers, ensemble.as_ref(), labels)?;
            rec.losses[k].ce = item(&ce)?;
            let mut l = ce;
            if let Some(kl) = kl {
                rec.losses[k].kl = item(&kl)?;
                l = ops::add(&l, &kl)?;
            }
            if let Some(l1) = l1_term(&mut self.plan, k, &feats, &pass)? {
                rec.losses[k].g = item(&l1)?;
                l = ops::add(&l, &l1)?;
            }
            total = add_opt(total, l)?;
        }
        if let Some(total) = total {
            tape.backward(&total)?;
            self.sgd.step(collect_params(&mut self.plan, NetPart::Everything, true, false), lr)?;
            self.zero_grad();
        }
        Ok(rec)
    }

    /// Asynchronous mutual learning: networks are updated in order, each
    /// against its teachers' latest logits. A network that has already been
    /// updated in this batch is re-run (running statistics untouched) to
    /// produce its fresh logits; networks not yet updated reuse the logits
    /// of the initial pass. For two networks: three extractor passes.
    fn dml_step(&mut self, x: &Tensor, labels: &[usize], lr: f64) -> Result<StepRecord> {
        let tape = Tape::new();
        let pass = Pass::train(&tape);
        let (_, logits) = self.forward_all(x, &pass)?;
        let mut rec = StepRecord::new(&logits)?;
        let mut teachers: Vec<Tensor> = logits.iter().map(Tensor::detach).collect();
        let k_nets = self.plan.k();
        for k in 0..k_nets {
            let (ce, kl) = logit_terms(&self.plan, k, &logits[k], &teachers, None, labels)?;
            rec.losses[k].ce = item(&ce)?;
            let mut l = ce;
            if let Some(kl) = kl {
                rec.losses[k].kl = item(&kl)?;
                l = ops::add(&l, &kl)?;
            }
            tape.backward(&l)?;
            let net = &mut self.plan.nets[k];
            self.sgd.step(prefixed(&format!("net{k}"), net.params_mut()), lr)?;
            net.zero_grad();
            let needed = (k + 1..k_nets).any(|j| {
                self.plan.incoming(j).iter().any(|&e| self.plan.edges[e].src == k)
            });
            if needed {
                let scratch = Tape::new();
                let (_, z) = self.plan.nets[k].forward(x, &Pass::train(&scratch).keep_stats())?;
                teachers[k] = z.detach();
            }
        }
        Ok(rec)
    }
}
