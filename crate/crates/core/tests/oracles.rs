//! Forward values of the tensor ops and losses against frozen float64
//! reference values and naive loop oracles.

mod common;

use afd::losses;
use afd::tensor::ops::{self, BnMode, RunningStats};
use afd::{Tape, Tensor};
use common::{rng, uniform32};
use proptest::prelude::*;

fn seq(shape: &[usize], f: impl Fn(f64) -> f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| f(i as f64)).collect()).unwrap()
}

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol, "element {i}: {g} vs {w}");
    }
}

// Reference values below were computed independently in float64.

#[test]
fn linear_fixture() {
    let x = seq(&[4, 3], |i| (0.5 * i + 0.1).sin());
    let w = seq(&[2, 3], |i| (0.3 * i).cos());
    let b = Tensor::new(vec![2], vec![0.25, -0.5]).unwrap();
    let want = [
        1.6248021493195755, -0.17029845954782635, 2.499690650455229, 0.47060064791145373,
        -0.8065285068571808, -0.6923863929119425, -2.149162390569696, -1.4978183980585218,
    ];
    assert_close(ops::linear(&x, &w, &b).unwrap().data(), &want, 1e-12);
}

#[test]
fn conv_fixture_stride_two_pad_one() {
    let x = seq(&[1, 2, 6, 6], |i| (0.37 * i).sin());
    let k = seq(&[3, 2, 3, 3], |i| (0.11 * i + 0.2).cos() - 0.5);
    let b = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
    let y = ops::conv2d(&x, &k, Some(&b), 2, 1).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3, 3]);
    let want = [
        -0.7151649126579284, 0.5602357600525822, 2.1451095498134074, -0.6465573734217751,
        -1.7771212089520998, -1.9439785806585963, 1.5406770397243892, 1.5445644335236768,
        0.12467675863977731, -4.811897399366837, -5.7711137084807484, -1.700885822584106,
        -0.6416541810191967, -0.6771382450349068, -0.25129052174053246, -0.2523341358582651,
        -0.5016598621862444, -0.813628436175228, 0.26339859265722615, -0.9750486536846286,
        -1.7023996098657046, 0.3738239282122099, 1.5225771217494504, 2.406016421945996,
        -1.1172368227419094, -1.747499277848785, -0.7417342782010692,
    ];
    assert_close(y.data(), &want, 1e-12);
}

#[test]
fn batch_norm_fixture_and_running_stats() {
    let x = seq(&[3, 2, 2, 2], |i| 2.0 * (1.3 * i).sin() + 0.1 * i);
    let gamma = Tensor::new(vec![2], vec![1.5, 0.5]).unwrap();
    let beta = Tensor::new(vec![2], vec![0.2, -0.1]).unwrap();
    let mut st = RunningStats::new(2, 0.1);
    let y = ops::batch_norm(&x, &gamma, &beta, 1e-5, BnMode::Train, Some(&mut st)).unwrap();
    let want = [
        -0.788536693380105, 1.312587681185032, 0.48740873680754865, -1.9033356276047222,
        -1.0011267929865941, -0.2438730028972734, 0.30560194804018065, -0.10939032226478031,
        -1.6754286697988048, -1.4352842822880352, 1.1189861479968077, 2.397219268875441,
        -0.08390493916015251, -0.7345521184533583, -0.48778241654413373, 0.3431796834663013,
        2.79528696589663, 0.74832299773264, -0.96871421088598, 0.31148768546354955,
        0.6115265119279076, 0.6871938632447534, -0.03623343169454504, -0.450638982678306,
    ];
    assert_close(y.data(), &want, 1e-12);
    assert_close(&st.mean, &[0.09537174184350886, 0.13666825142494965], 1e-12);
    assert_close(&st.var, &[1.1284666666908725, 1.1509702311717114], 1e-12);
}

fn channel_moments(y: &Tensor<f32>, c: usize) -> (f64, f64) {
    let [b, ch, h, w] = [y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]];
    let vals: Vec<f64> = (0..b)
        .flat_map(|n| {
            let start = (n * ch + c) * h * w;
            y.data()[start..start + h * w].iter().map(|&v| f64::from(v))
        })
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
    (m, v)
}

#[test]
fn batch_norm_output_statistics() {
    let mut r = rng(31);
    let x = uniform32(&mut r, &[8, 3, 5, 5], -4.0, 7.0);
    let ones = Tensor::full(vec![3], 1.0f32);
    let y = ops::batch_norm(&x, &ones, &Tensor::zeros(vec![3]), 1e-5, BnMode::Train, None).unwrap();
    for c in 0..3 {
        let (m, v) = channel_moments(&y, c);
        assert!(m.abs() < 1e-4 && (v - 1.0).abs() < 1e-4, "channel {c}: mean {m}, var {v}");
    }
    let shifted = ops::batch_norm(&y, &ones, &Tensor::full(vec![3], 5.0), 1e-5, BnMode::Train, None).unwrap();
    for c in 0..3 {
        assert!((channel_moments(&shifted, c).0 - 5.0).abs() < 1e-4);
    }
}

#[test]
fn global_avg_pool_fixture() {
    let x = seq(&[1, 2, 3, 3], |i| (0.8 * i).cos());
    assert_close(
        ops::global_avg_pool(&x).unwrap().data(),
        &[0.12604720617268397, 0.07083128157138407],
        1e-12,
    );
}

#[test]
fn linear_matches_loop_oracle_f32() {
    for seed in 0..5 {
        let mut r = rng(40 + seed);
        let x = uniform32(&mut r, &[4, 3], -1.0, 1.0);
        let w = uniform32(&mut r, &[2, 3], -1.0, 1.0);
        let b = uniform32(&mut r, &[2], -1.0, 1.0);
        let y = ops::linear(&x, &w, &b).unwrap();
        for bi in 0..4 {
            for o in 0..2 {
                let mut s = f64::from(b.data()[o]);
                for i in 0..3 {
                    s += f64::from(x.data()[bi * 3 + i]) * f64::from(w.data()[o * 3 + i]);
                }
                assert!((f64::from(y.data()[bi * 2 + o]) - s).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn conv_matches_sliding_window_oracle_f32() {
    let (stride, pad) = (2usize, 1usize);
    for seed in 0..5 {
        let mut r = rng(50 + seed);
        let x = uniform32(&mut r, &[1, 2, 6, 6], -0.5, 0.5);
        let k = uniform32(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
        let y = ops::conv2d(&x, &k, None, stride, pad).unwrap();
        let out = (6 + 2 * pad - 3) / stride + 1;
        assert_eq!(y.shape(), &[1, 3, out, out]);
        for o in 0..3 {
            for oy in 0..out {
                for ox in 0..out {
                    let mut s = 0.0f64;
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if !(0..6).contains(&iy) || !(0..6).contains(&ix) {
                                    continue;
                                }
                                let xv = x.data()[(c * 6 + iy as usize) * 6 + ix as usize];
                                let kv = k.data()[((o * 2 + c) * 3 + ky) * 3 + kx];
                                s += f64::from(xv) * f64::from(kv);
                            }
                        }
                    }
                    let got = f64::from(y.data()[(o * out + oy) * out + ox]);
                    assert!((got - s).abs() <= 1e-6, "({o},{oy},{ox}): {got} vs {s}");
                }
            }
        }
    }
}

#[test]
fn gap_matches_loop_oracle() {
    let mut r = rng(60);
    let x = uniform32(&mut r, &[3, 4, 5, 2], -2.0, 2.0);
    let y = ops::global_avg_pool(&x).unwrap();
    for (i, chunk) in x.data().chunks(10).enumerate() {
        let m = chunk.iter().map(|&v| f64::from(v)).sum::<f64>() / 10.0;
        assert!((f64::from(y.data()[i]) - m).abs() <= 1e-6);
    }
}

#[test]
fn softened_softmax_fixture() {
    let z = Tensor::new(vec![1, 2], vec![2.0f64, 0.0]).unwrap();
    let p = losses::softened_softmax(&z, 2.0).unwrap().probs;
    assert_close(p.data(), &[0.7310585786300049, 0.26894142136999516], 1e-12);
    let flat = Tensor::new(vec![1, 3], vec![4.0f64; 3]).unwrap();
    assert_close(losses::softened_softmax(&flat, 7.0).unwrap().probs.data(), &[1.0 / 3.0; 3], 1e-15);
}

#[test]
fn cross_entropy_fixture_and_loop_oracle() {
    let z = seq(&[3, 4], |i| (0.9 * i).sin());
    let labels = [1, 3, 0];
    let ce = losses::cross_entropy(&labels, &z).unwrap().item().unwrap();
    assert!((ce - 1.0878721543161463).abs() < 1e-12);

    let mut r = rng(61);
    let z = uniform32(&mut r, &[6, 5], -3.0, 3.0);
    let labels = [0, 4, 2, 2, 1, 3];
    let mut want = 0.0f64;
    for (b, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = z.data()[b * 5..b * 5 + 5].iter().map(|&v| f64::from(v)).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        want += lse - row[y];
    }
    want /= 6.0;
    let got = f64::from(losses::cross_entropy(&labels, &z).unwrap().item().unwrap());
    assert!((got - want).abs() <= 1e-6);
}

#[test]
fn kl_mimicry_fixture_value_and_student_gradient() {
    let zt = seq(&[2, 5], |i| 2.0 * (0.4 * i).cos());
    let zs = seq(&[2, 5], |i| 1.5 * (0.6 * i).sin());
    let tape = Tape::new();
    let s = tape.watch(&zs);
    let kl = losses::kl_mimicry(&zt, &s, 3.0).unwrap();
    tape.backward(&kl).unwrap();
    assert!((kl.item().unwrap() - 0.31730840376808017).abs() < 1e-12);
    let want = [
        -0.16650925974021039, -0.07649201553987693, 0.031632764483303835, 0.10131295302915287,
        0.11005555776763065, 0.039558282430423086, 0.0064413932649855276, -0.015037773747052757,
        -0.020523519120664992, -0.010438382827690598,
    ];
    assert_close(&s.grad().unwrap(), &want, 1e-12);
}

#[test]
fn logit_loss_recomposes() {
    let mut r = rng(62);
    let own = uniform32(&mut r, &[4, 6], -2.0, 2.0);
    let peer = uniform32(&mut r, &[4, 6], -2.0, 2.0);
    let labels = [5, 0, 3, 3];
    let whole = losses::logit_loss(&labels, &own, &peer, 3.0).unwrap().item().unwrap();
    let ce = losses::cross_entropy(&labels, &own).unwrap().item().unwrap();
    let kl = losses::kl_mimicry(&peer, &own, 3.0).unwrap().item().unwrap();
    assert!((whole - (ce + kl)).abs() <= 1e-6);
}

#[test]
fn lsgan_fixtures_and_loop_oracle() {
    let dp = Tensor::new(vec![3], vec![0.9f64, 0.2, 0.6]).unwrap();
    let dn = Tensor::new(vec![3], vec![0.1f64, 0.7, 0.5]).unwrap();
    assert!((losses::lsgan_d_loss(&dp, &dn).unwrap().item().unwrap() - 0.52).abs() < 1e-12);
    assert!((losses::lsgan_g_loss(&dn).unwrap().item().unwrap() - 0.38333333333333336).abs() < 1e-12);

    let mut r = rng(63);
    let a = uniform32(&mut r, &[16], 0.0, 1.0);
    let b = uniform32(&mut r, &[16], 0.0, 1.0);
    let want: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &o)| (1.0 - f64::from(p)).powi(2) + f64::from(o).powi(2))
        .sum::<f64>()
        / 16.0;
    let got = f64::from(losses::lsgan_d_loss(&a, &b).unwrap().item().unwrap());
    assert!((got - want).abs() <= 1e-6);
    let bad = Tensor::new(vec![1], vec![1.5f32]).unwrap();
    assert!(matches!(
        losses::lsgan_g_loss(&bad),
        Err(afd::Error::Contract { .. })
    ));
}

#[test]
fn l1_alignment_loop_oracle() {
    let mut r = rng(64);
    let a = uniform32(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
    let b = uniform32(&mut r, &[2, 3, 4, 4], -1.0, 1.0);
    let want = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum::<f64>()
        / a.len() as f64;
    let got = f64::from(losses::l1_alignment(&a, &b).unwrap().item().unwrap());
    assert!((got - want).abs() <= 1e-6);
}

// Wide enough to be sharply peaked at T = 0.5, narrow enough that every
// probability stays representably inside (0, 1).
fn logits(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn softened_softmax_is_row_stochastic(z in logits(3, 5)) {
        for t in [0.5, 1.0, 3.0, 10.0] {
            let p = losses::softened_softmax(&z, t).unwrap().probs;
            for row in p.data().chunks(5) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_for_matching_rows(zt in logits(2, 4), zs in logits(2, 4)) {
        let kl = losses::kl_mimicry(&zt, &zs, 3.0).unwrap().item().unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(losses::kl_mimicry(&zt, &zt, 3.0).unwrap().item().unwrap().abs() < 1e-12);
        let pt = losses::softened_softmax(&zt, 3.0).unwrap().probs;
        let ps = losses::softened_softmax(&zs, 3.0).unwrap().probs;
        let max_diff = pt.data().iter().zip(ps.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if kl == 0.0 {
            prop_assert!(max_diff < 1e-6);
        }
        if max_diff >= 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn higher_temperature_smooths(z in logits(1, 6)) {
        let spread = z.data().iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
            - z.data().iter().fold(f64::INFINITY, |a, &v| a.min(v));
        prop_assume!(spread > 1e-3);
        let peak = |t: f64| {
            losses::softened_softmax(&z, t).unwrap().probs.data().iter().fold(0.0f64, |a, &v| a.max(v))
        };
        prop_assert!(peak(1.0) > peak(3.0));
        prop_assert!(peak(3.0) > peak(10.0));
    }
}
