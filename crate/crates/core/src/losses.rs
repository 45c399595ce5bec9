//! Scalar training objectives.
//!
//! All batch reductions are means. Peer/teacher inputs are detached inside
//! each loss, so gradients only ever reach the student side.

use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Element, Tensor};

/// Row-stochastic `softmax(z / T)`.
#[derive(Debug, Clone)]
pub struct SoftDistribution<E: Element = f32> {
    pub probs: Tensor<E>,
    pub temperature: E,
}

fn check_temperature<E: Element>(t: E) -> Result<()> {
    if !(t > E::zero()) || !t.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {t:?}")));
    }
    Ok(())
}

/// `log softmax(z / T)`, recorded when `z` is tracked.
pub fn log_softened<E: Element>(z: &Tensor<E>, t: E) -> Result<Tensor<E>> {
    check_temperature(t)?;
    ops::log_softmax(&ops::scale(z, E::one() / t)?)
}

pub fn softened_softmax<E: Element>(z: &Tensor<E>, t: E) -> Result<SoftDistribution<E>> {
    check_temperature(t)?;
    Ok(SoftDistribution {
        probs: ops::softmax(&ops::scale(z, E::one() / t)?)?,
        temperature: t,
    })
}

/// Mean negative log-likelihood of `labels` under `softmax(z)`.
pub fn cross_entropy<E: Element>(labels: &[usize], z: &Tensor<E>) -> Result<Tensor<E>> {
    if let [_, classes] = *z.shape() {
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
    }
    let logp = ops::log_softmax(z)?;
    let picked = ops::pick(&logp, labels)?;
    ops::scale(&ops::mean(&picked)?, -E::one())
}

/// `T² · mean_b KL(target_b ‖ softmax(student_b / T))` for a fixed target
/// distribution given by its log-probabilities.
pub fn kl_to_target<E: Element>(target_log_probs: &Tensor<E>, student: &Tensor<E>, t: E) -> Result<Tensor<E>> {
    if target_log_probs.shape() != student.shape() {
        return Err(Error::dim(
            "kl",
            format!(
                "target {:?} vs student {:?}",
                target_log_probs.shape(),
                student.shape()
            ),
        ));
    }
    let batch = E::from_usize(student.shape()[0]).unwrap();
    let log_p = target_log_probs.detach();
    let p = Tensor::new(
        log_p.shape().to_vec(),
        log_p.data().iter().map(|v| v.exp()).collect(),
    )?;
    let log_q = log_softened(student, t)?;
    let diff = ops::sub(&log_p, &log_q)?;
    let total = ops::sum(&ops::mul(&diff, &p)?)?;
    ops::scale(&total, t * t / batch)
}

/// Mimicry loss from `teacher` to `student`: `T²·KL(σ(z_t/T) ‖ σ(z_s/T))`,
/// batch mean. The teacher side is treated as a constant.
pub fn kl_mimicry<E: Element>(teacher: &Tensor<E>, student: &Tensor<E>, t: E) -> Result<Tensor<E>> {
    if teacher.shape() != student.shape() {
        return Err(Error::dim(
            "kl_mimicry",
            format!("teacher {:?} vs student {:?}", teacher.shape(), student.shape()),
        ));
    }
    let target = log_softened(&teacher.detach(), t)?;
    kl_to_target(&target, student, t)
}

/// Cross-entropy plus `T²`-scaled mimicry toward the peer.
pub fn logit_loss<E: Element>(
    labels: &[usize],
    own: &Tensor<E>,
    peer: &Tensor<E>,
    t: E,
) -> Result<Tensor<E>> {
    ops::add(&cross_entropy(labels, own)?, &kl_mimicry(peer, own, t)?)
}

fn check_unit<E: Element>(op: &'static str, d: &Tensor<E>) -> Result<()> {
    if let Some(v) = d.data().iter().find(|&&v| !(v >= E::zero() && v <= E::one())) {
        return Err(Error::Contract {
            op,
            msg: format!("discriminator output {v:?} outside [0,1]"),
        });
    }
    Ok(())
}

/// `mean[(1 − d_peer)² + d_own²]`: scores on the peer's feature map are
/// pushed to 1 and scores on the own map to 0.
pub fn lsgan_d_loss<E: Element>(d_peer: &Tensor<E>, d_own: &Tensor<E>) -> Result<Tensor<E>> {
    check_unit("lsgan_d_loss", d_peer)?;
    check_unit("lsgan_d_loss", d_own)?;
    let real = ops::square(&ops::add_scalar(&ops::scale(d_peer, -E::one())?, E::one())?)?;
    let fake = ops::square(d_own)?;
    ops::mean(&ops::add(&real, &fake)?)
}

/// `mean[(1 − d_own)²]`: the own network is rewarded for being scored as
/// its peer.
pub fn lsgan_g_loss<E: Element>(d_own: &Tensor<E>) -> Result<Tensor<E>> {
    check_unit("lsgan_g_loss", d_own)?;
    let miss = ops::add_scalar(&ops::scale(d_own, -E::one())?, E::one())?;
    ops::mean(&ops::square(&miss)?)
}

/// Mean absolute difference to a detached peer feature map.
pub fn l1_alignment<E: Element>(own: &Tensor<E>, peer: &Tensor<E>) -> Result<Tensor<E>> {
    if own.shape() != peer.shape() {
        return Err(Error::dim(
            "l1_alignment",
            format!("own {:?} vs peer {:?}", own.shape(), peer.shape()),
        ));
    }
    ops::mean(&ops::abs(&ops::sub(own, &peer.detach())?)?)
}
