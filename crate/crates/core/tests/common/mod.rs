#![allow(dead_code)]

pub mod fixtures;
pub mod gradsuite;

use afd::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform32(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Maximum relative error between tape gradients and central finite
/// differences of `f` with respect to every input element.
///
/// `f` is evaluated once with the inputs watched on a tape and then on
/// untracked perturbed copies; it must return a one-element tensor.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(Option<&Tape<f64>>, &[Tensor<f64>]) -> Tensor<f64>,
{
    let tape = Tape::new();
    let watched: Vec<_> = inputs.iter().map(|x| tape.watch(x)).collect();
    let loss = f(Some(&tape), &watched);
    tape.backward(&loss).unwrap();

    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = watched[k].grad().unwrap_or_else(|| vec![0.0; x.len()]);
        for i in 0..x.len() {
            let eval = |delta: f64| {
                let mut args: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach()).collect();
                let mut d = x.to_vec();
                d[i] += delta;
                args[k] = Tensor::new(x.shape().to_vec(), d).unwrap();
                f(None, &args).item().unwrap()
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], fd));
        }
    }
    worst
}

/// Contracts a tensor to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
pub fn project(y: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let w = uniform(&mut r, y.shape(), -1.0, 1.0);
    afd::tensor::ops::sum(&afd::tensor::ops::mul(y, &w).unwrap()).unwrap()
}
