use super::{adversarial_terms, ensemble_target, item, l1_term, logit_terms, DistillPlan, NetLosses};
use crate::data::{Dataset, Method};
use crate::error::{Error, Result};
use crate::nn::Pass;
use crate::tensor::Tensor;

/// Samples per evaluation batch.
pub const EVAL_BATCH: usize = 256;

fn argmax_row<T: PartialOrd>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a `[B, C]` tensor; ties go to the lowest index.
pub fn argmax(z: &Tensor) -> Result<Vec<usize>> {
    let [_, c] = *z.shape() else {
        return Err(Error::dim("argmax", format!("expected [B, C], got {:?}", z.shape())));
    };
    Ok(z.data().chunks_exact(c).map(argmax_row).collect())
}

/// Average-ensemble prediction: argmax of the mean of the members'
/// softmax (temperature 1), ties to the lowest class index.
pub fn ensemble_predict(logits: &[&Tensor]) -> Result<Vec<usize>> {
    let first = logits
        .first()
        .ok_or_else(|| Error::Usage("ensemble of zero networks".into()))?;
    let [b, c] = *first.shape() else {
        return Err(Error::dim("ensemble", format!("expected [B, C], got {:?}", first.shape())));
    };
    let mut mean = vec![0.0f64; b * c];
    for z in logits {
        if z.shape() != first.shape() {
            return Err(Error::dim("ensemble", format!("{:?} vs {:?}", z.shape(), first.shape())));
        }
        for (row, acc) in z.data().chunks_exact(c).zip(mean.chunks_exact_mut(c)) {
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v));
            let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for (a, e) in acc.iter_mut().zip(exps) {
                *a += e / s;
            }
        }
    }
    let k = logits.len() as f64;
    for v in &mut mean {
        *v /= k;
    }
    Ok(mean.chunks_exact(c).map(argmax_row).collect())
}

/// Eval-mode metrics over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sample-weighted mean losses per network, computed as in training
    /// but with running statistics.
    pub losses: Vec<NetLosses>,
    /// Percent correct per network.
    pub top1: Vec<f64>,
    /// Percent correct of the average ensemble.
    pub ensemble_top1: f64,
    pub samples: usize,
}

impl EvalReport {
    pub fn mean_top1(&self) -> f64 {
        self.top1.iter().sum::<f64>() / self.top1.len() as f64
    }
}

fn percent(correct: usize, n: usize) -> f64 {
    100.0 * correct as f64 / n as f64
}

/// Evaluates every network of the plan (eval mode) in fixed sample order.
pub fn evaluate(plan: &mut DistillPlan, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let k = plan.k();
    let n = data.len();
    let mut losses = vec![NetLosses::default(); k];
    let mut correct = vec![0usize; k];
    let mut ens_correct = 0usize;
    let pass = Pass::eval();
    let order: Vec<usize> = (0..n).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = data.gather(chunk)?;
        let w = chunk.len() as f64 / n as f64;
        let mut feats = Vec::with_capacity(k);
        let mut logits = Vec::with_capacity(k);
        for net in &mut plan.nets {
            let (f, z) = net.forward(&x, &pass)?;
            feats.push(f);
            logits.push(z);
        }
        let ensemble = match plan.method {
            Method::KdEnsemble => Some(ensemble_target(&logits, plan.temperature)?),
            _ => None,
        };
        for i in 0..k {
            let (ce, kl) = logit_terms(plan, i, &logits[i], &logits, ensemble.as_ref(), &labels)?;
            losses[i].ce += w * item(&ce)?;
            if let Some(kl) = kl {
                losses[i].kl += w * item(&kl)?;
            }
            if let Some(l1) = l1_term(plan, i, &feats, &pass)? {
                losses[i].g += w * item(&l1)?;
            }
            let pred = argmax(&logits[i])?;
            correct[i] += pred.iter().zip(&labels).filter(|(p, y)| p == y).count();
        }
        if plan.method == Method::Afd {
            for (e, (ld, lg)) in adversarial_terms(plan, &feats, &pass)?.into_iter().enumerate() {
                let dst = plan.edges[e].dst;
                losses[dst].d += w * item(&ld)?;
                losses[dst].g += w * item(&lg)?;
            }
        }
        let ens = ensemble_predict(&logits.iter().collect::<Vec<_>>())?;
        ens_correct += ens.iter().zip(&labels).filter(|(p, y)| p == y).count();
    }
    Ok(EvalReport {
        losses,
        top1: correct.iter().map(|&c| percent(c, n)).collect(),
        ensemble_top1: percent(ens_correct, n),
        samples: n,
    })
}
