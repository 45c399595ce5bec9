//! Finite-difference checks for every differentiable operation and loss.

use afd::losses;
use afd::nn::{build_discriminator, build_network, build_transfer_layer, InputShape, Pass};
use afd::tensor::ops::{self, Activation, BnMode, RunningStats};
use afd::Tape;

use super::{grad_check, project, rng, uniform};

pub const INSTANCES: u64 = 10;

pub struct CheckResult {
    pub name: &'static str,
    pub instances: u64,
    pub worst: f64,
}

fn run<G>(name: &'static str, gen: G) -> CheckResult
where
    G: Fn(u64) -> f64,
{
    let worst = (0..INSTANCES).map(&gen).fold(0.0, f64::max);
    CheckResult {
        name,
        instances: INSTANCES,
        worst,
    }
}

fn labels(seed: u64, batch: usize, classes: usize) -> Vec<usize> {
    (0..batch).map(|b| ((seed as usize) * 7 + b * 3) % classes).collect()
}

fn owned_tape(tape: Option<&Tape<f64>>) -> Tape<f64> {
    tape.cloned().unwrap_or_default()
}

pub fn all() -> Vec<CheckResult> {
    vec![
        run("linear", |s| {
            let mut r = rng(100 + s);
            let x = uniform(&mut r, &[4, 3], -1.0, 1.0);
            let w = uniform(&mut r, &[2, 3], -1.0, 1.0);
            let b = uniform(&mut r, &[2], -1.0, 1.0);
            grad_check(&[x, w, b], |_, a| project(&ops::linear(&a[0], &a[1], &a[2]).unwrap(), s))
        }),
        run("conv2d", |s| {
            let mut r = rng(200 + s);
            let (stride, pad) = [(1, 0), (2, 1), (1, 1)][(s % 3) as usize];
            let x = uniform(&mut r, &[2, 2, 5, 5], -1.0, 1.0);
            let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
            let b = uniform(&mut r, &[3], -1.0, 1.0);
            grad_check(&[x, k, b], |_, a| {
                project(&ops::conv2d(&a[0], &a[1], Some(&a[2]), stride, pad).unwrap(), s)
            })
        }),
        run("batch_norm(train)", |s| {
            let mut r = rng(300 + s);
            let x = uniform(&mut r, &[3, 2, 3, 3], -2.0, 2.0);
            let g = uniform(&mut r, &[2], 0.5, 1.5);
            let b = uniform(&mut r, &[2], -1.0, 1.0);
            grad_check(&[x, g, b], |_, a| {
                project(&ops::batch_norm(&a[0], &a[1], &a[2], 1e-5, BnMode::Train, None).unwrap(), s)
            })
        }),
        run("batch_norm(eval)", |s| {
            let mut r = rng(350 + s);
            let x = uniform(&mut r, &[2, 2, 3, 3], -2.0, 2.0);
            let g = uniform(&mut r, &[2], 0.5, 1.5);
            let b = uniform(&mut r, &[2], -1.0, 1.0);
            let stats = RunningStats {
                mean: vec![0.3, -0.2],
                var: vec![1.5, 0.7],
                momentum: 0.1,
            };
            grad_check(&[x, g, b], |_, a| {
                let mut st = stats.clone();
                project(&ops::batch_norm(&a[0], &a[1], &a[2], 1e-5, BnMode::Eval, Some(&mut st)).unwrap(), s)
            })
        }),
        run("leaky_relu", |s| {
            let mut r = rng(400 + s);
            let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
            grad_check(&[x], |_, a| project(&ops::activation(Activation::LeakyRelu(0.2), &a[0]).unwrap(), s))
        }),
        run("relu", |s| {
            let mut r = rng(450 + s);
            let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
            grad_check(&[x], |_, a| project(&ops::relu(&a[0]).unwrap(), s))
        }),
        run("sigmoid", |s| {
            let mut r = rng(500 + s);
            let x = uniform(&mut r, &[3, 5], -4.0, 4.0);
            grad_check(&[x], |_, a| project(&ops::sigmoid(&a[0]).unwrap(), s))
        }),
        run("global_avg_pool", |s| {
            let mut r = rng(600 + s);
            let x = uniform(&mut r, &[2, 3, 3, 4], -1.0, 1.0);
            grad_check(&[x], |_, a| project(&ops::global_avg_pool(&a[0]).unwrap(), s))
        }),
        run("max_pool2d", |s| {
            let mut r = rng(650 + s);
            let x = uniform(&mut r, &[2, 2, 4, 5], -1.0, 1.0);
            grad_check(&[x], |_, a| project(&ops::max_pool2d(&a[0], 2).unwrap(), s))
        }),
        run("softened_softmax", |s| {
            let mut r = rng(700 + s);
            let z = uniform(&mut r, &[3, 4], -3.0, 3.0);
            let t = [0.5, 1.0, 3.0, 10.0][(s % 4) as usize];
            grad_check(&[z], |_, a| project(&losses::softened_softmax(&a[0], t).unwrap().probs, s))
        }),
        run("log_softmax", |s| {
            let mut r = rng(750 + s);
            let z = uniform(&mut r, &[3, 4], -3.0, 3.0);
            grad_check(&[z], |_, a| project(&ops::log_softmax(&a[0]).unwrap(), s))
        }),
        run("cross_entropy", |s| {
            let mut r = rng(800 + s);
            let z = uniform(&mut r, &[5, 4], -3.0, 3.0);
            let y = labels(s, 5, 4);
            grad_check(&[z], |_, a| losses::cross_entropy(&y, &a[0]).unwrap())
        }),
        run("kl_mimicry", |s| {
            let mut r = rng(900 + s);
            let zt = uniform(&mut r, &[4, 5], -3.0, 3.0);
            let zs = uniform(&mut r, &[4, 5], -3.0, 3.0);
            // the teacher is a constant by contract; only the student is checked
            grad_check(&[zs], |_, a| losses::kl_mimicry(&zt, &a[0], 3.0).unwrap())
        }),
        run("logit_loss", |s| {
            let mut r = rng(1000 + s);
            let own = uniform(&mut r, &[4, 5], -3.0, 3.0);
            let peer = uniform(&mut r, &[4, 5], -3.0, 3.0);
            let y = labels(s, 4, 5);
            grad_check(&[own], |_, a| losses::logit_loss(&y, &a[0], &peer, 3.0).unwrap())
        }),
        run("lsgan_d_loss", |s| {
            let mut r = rng(1100 + s);
            let dp = uniform(&mut r, &[6], 0.05, 0.95);
            let d_own = uniform(&mut r, &[6], 0.05, 0.95);
            grad_check(&[dp, d_own], |_, a| losses::lsgan_d_loss(&a[0], &a[1]).unwrap())
        }),
        run("lsgan_g_loss", |s| {
            let mut r = rng(1200 + s);
            let d_own = uniform(&mut r, &[6], 0.05, 0.95);
            grad_check(&[d_own], |_, a| losses::lsgan_g_loss(&a[0]).unwrap())
        }),
        run("l1_alignment", |s| {
            let mut r = rng(1300 + s);
            let own = uniform(&mut r, &[2, 3, 2, 2], -1.0, 1.0);
            let peer = uniform(&mut r, &[2, 3, 2, 2], -1.0, 1.0);
            grad_check(&[own], |_, a| losses::l1_alignment(&a[0], &peer).unwrap())
        }),
        run("discriminator", |s| {
            let mut r = rng(1400 + s);
            let x = uniform(&mut r, &[3, 4, 5, 5], -1.0, 1.0);
            let d = build_discriminator::<f64>(4, 3, s).unwrap();
            grad_check(&[x], |tape, a| {
                let tape = owned_tape(tape);
                let mut d = d.clone();
                let y = d.forward(&a[0], &Pass::train(&tape).keep_stats()).unwrap();
                afd::tensor::ops::sum(&y).unwrap()
            })
        }),
        run("transfer_layer", |s| {
            let mut r = rng(1500 + s);
            let x = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
            let t = build_transfer_layer::<f64>(2, 3, s).unwrap();
            grad_check(&[x], |tape, a| {
                let tape = owned_tape(tape);
                let mut t = t.clone();
                project(&t.forward(&a[0], &Pass::train(&tape).keep_stats()).unwrap(), s)
            })
        }),
        run("network", |s| {
            let mut r = rng(1600 + s);
            let shape = InputShape {
                channels: 1,
                height: 6,
                width: 6,
            };
            let x = uniform(&mut r, &[3, 1, 6, 6], -1.0, 1.0);
            let net = build_network::<f64>("conv:3:3:1-bn-relu-pool:2-conv:4:3:1-bn-relu", shape, 3, s).unwrap();
            let y = labels(s, 3, 3);
            grad_check(&[x], |tape, a| {
                let tape = owned_tape(tape);
                let mut net = net.clone();
                let (_, z) = net.forward(&a[0], &Pass::train(&tape).keep_stats()).unwrap();
                losses::cross_entropy(&y, &z).unwrap()
            })
        }),
    ]
}
