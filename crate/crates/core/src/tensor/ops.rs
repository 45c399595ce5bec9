//! Differentiable operations.
//!
//! Every function validates shapes, computes the forward value, rejects
//! non-finite results and records a gradient rule when any input is tracked.

use std::rc::Rc;

use super::{record, Element, Tensor};
use crate::error::{Error, Result};

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn dims4<E: Element>(op: &'static str, x: &Tensor<E>) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(Error::dim(op, format!("expected 4-d input, got {s:?}"))),
    }
}

fn dims2<E: Element>(op: &'static str, x: &Tensor<E>) -> Result<[usize; 2]> {
    match *x.shape() {
        [r, c] => Ok([r, c]),
        ref s => Err(Error::dim(op, format!("expected 2-d input, got {s:?}"))),
    }
}

/// `out[b,o] = Σ_i x[b,i]·weight[o,i] + bias[o]`.
pub fn linear<E: Element>(x: &Tensor<E>, weight: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let [batch, f_in] = dims2("linear", x)?;
    let [f_out, w_in] = dims2("linear", weight)?;
    if w_in != f_in || bias.shape() != [f_out] {
        return Err(Error::dim(
            "linear",
            format!(
                "x {:?}, weight {:?}, bias {:?}",
                x.shape(),
                weight.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = Vec::with_capacity(batch * f_out);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    E::gemm(batch, f_in, f_out, x.data(), false, weight.data(), true, &mut out, E::one());

    let xd = x.data_rc();
    let wd = weight.data_rc();
    record(
        "linear",
        vec![batch, f_out],
        out,
        &[x, weight, bias],
        Box::new(move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![E::zero(); batch * f_in];
                E::gemm(batch, f_out, f_in, g, false, &wd, false, &mut gx, E::zero());
                gx
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![E::zero(); f_out * f_in];
                E::gemm(f_out, batch, f_in, g, true, &xd, false, &mut gw, E::zero());
                gw
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![E::zero(); f_out];
                for row in g.chunks_exact(f_out) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a = *a + *b);
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    )
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[C,H,W]` into `[C·kH·kW, oH·oW]`.
    fn im2col<E: Element>(&self, img: &[E], cols: &mut [E]) {
        let n = self.cols();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        if ii < 0 || ii >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = E::zero());
                            continue;
                        }
                        let src = &img[(c * self.h + ii as usize) * self.w..][..self.w];
                        for (oj, v) in line.iter_mut().enumerate() {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            *v = if jj < 0 || jj >= self.w as isize {
                                E::zero()
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters columns back into an image.
    fn col2im<E: Element>(&self, cols: &[E], img: &mut [E]) {
        let n = self.cols();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut img[(c * self.h + ii as usize) * self.w..][..self.w];
                        for oj in 0..self.ow {
                            let jj = (oj * self.stride + kj) as isize - self.pad as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[jj as usize] = dst[jj as usize] + src[oi * self.ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-d cross-correlation with square stride and symmetric zero padding.
pub fn conv2d<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let [batch, c_in, h, w] = dims4("conv2d", x)?;
    let [c_out, k_in, kh, kw] = dims4("conv2d", kernel)?;
    if k_in != c_in {
        return Err(Error::dim(
            "conv2d",
            format!("input has {c_in} channels, kernel expects {k_in}"),
        ));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d", "stride must be positive"));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::dim(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::dim("conv2d", format!("bias shape {:?}", b.shape())));
        }
    }
    let geom = ConvGeom {
        c_in,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    };
    let (rows, ncols) = (geom.rows(), geom.cols());
    let img_len = c_in * h * w;
    let out_len = c_out * ncols;

    let mut out = vec![E::zero(); batch * out_len];
    let mut cols = vec![E::zero(); rows * ncols];
    for b in 0..batch {
        geom.im2col(&x.data()[b * img_len..(b + 1) * img_len], &mut cols);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                dst[o * ncols..(o + 1) * ncols].iter_mut().for_each(|v| *v = bv);
            }
        }
        E::gemm(c_out, rows, ncols, kernel.data(), false, &cols, false, dst, E::one());
    }

    let xd = x.data_rc();
    let kd = kernel.data_rc();
    let mut inputs = vec![x, kernel];
    if let Some(b) = bias {
        inputs.push(b);
    }
    record(
        "conv2d",
        vec![batch, c_out, geom.oh, geom.ow],
        out,
        &inputs,
        Box::new(move |g, needs| {
            let mut gx = needs[0].then(|| vec![E::zero(); batch * img_len]);
            let mut gk = needs[1].then(|| vec![E::zero(); c_out * rows]);
            let mut cols = vec![E::zero(); rows * ncols];
            for b in 0..batch {
                let gb = &g[b * out_len..(b + 1) * out_len];
                if let Some(gk) = gk.as_mut() {
                    geom.im2col(&xd[b * img_len..(b + 1) * img_len], &mut cols);
                    E::gemm(c_out, ncols, rows, gb, false, &cols, true, gk, E::one());
                }
                if let Some(gx) = gx.as_mut() {
                    E::gemm(rows, c_out, ncols, &kd, true, gb, false, &mut cols, E::zero());
                    geom.col2im(&cols, &mut gx[b * img_len..(b + 1) * img_len]);
                }
            }
            let mut result = vec![gx, gk];
            if needs.len() > 2 {
                result.push(needs[2].then(|| {
                    let mut gbias = vec![E::zero(); c_out];
                    for b in 0..batch {
                        for (o, acc) in gbias.iter_mut().enumerate() {
                            let s = b * out_len + o * ncols;
                            *acc = g[s..s + ncols].iter().fold(*acc, |a, &v| a + v);
                        }
                    }
                    gbias
                }));
            }
            result
        }),
    )
}

/// Batch-norm running statistics, updated by exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<E: Element = f32> {
    pub mean: Vec<E>,
    pub var: Vec<E>,
    pub momentum: E,
}

impl<E: Element> RunningStats<E> {
    /// Zero mean, unit variance.
    pub fn new(channels: usize, momentum: E) -> Self {
        Self {
            mean: vec![E::zero(); channels],
            var: vec![E::one(); channels],
            momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[B,C,H,W]`.
///
/// Train mode normalizes with the biased batch variance and, when `stats` is
/// given, folds the batch mean and unbiased variance into it. Eval mode
/// normalizes with `stats`, which must be present.
pub fn batch_norm<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: E,
    mode: BnMode,
    stats: Option<&mut RunningStats<E>>,
) -> Result<Tensor<E>> {
    let [batch, ch, h, w] = dims4("batch_norm", x)?;
    if gamma.shape() != [ch] || beta.shape() != [ch] {
        return Err(Error::dim(
            "batch_norm",
            format!("{ch} channels but gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
        ));
    }
    let hw = h * w;
    let count = batch * hw;
    let xs = x.data();
    let at = move |b: usize, c: usize| (b * ch + c) * hw;

    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![E::zero(); ch];
            let mut var = vec![E::zero(); ch];
            let n = E::from_usize(count).unwrap();
            for c in 0..ch {
                let mut s = E::zero();
                for b in 0..batch {
                    s = xs[at(b, c)..at(b, c) + hw].iter().fold(s, |a, &v| a + v);
                }
                let m = s / n;
                let mut q = E::zero();
                for b in 0..batch {
                    q = xs[at(b, c)..at(b, c) + hw]
                        .iter()
                        .fold(q, |a, &v| a + (v - m) * (v - m));
                }
                mean[c] = m;
                var[c] = q / n;
            }
            if let Some(st) = stats {
                if st.mean.len() != ch {
                    return Err(Error::dim("batch_norm", "running stats channel count"));
                }
                let unbias = if count > 1 {
                    n / (n - E::one())
                } else {
                    E::one()
                };
                for c in 0..ch {
                    st.mean[c] = (E::one() - st.momentum) * st.mean[c] + st.momentum * mean[c];
                    st.var[c] =
                        (E::one() - st.momentum) * st.var[c] + st.momentum * var[c] * unbias;
                }
            }
            (mean, var)
        }
        BnMode::Eval => {
            let st = stats.ok_or_else(|| {
                Error::State("batch_norm in eval mode without running statistics".into())
            })?;
            if st.mean.len() != ch {
                return Err(Error::dim("batch_norm", "running stats channel count"));
            }
            (st.mean.clone(), st.var.clone())
        }
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![E::zero(); xs.len()];
    let mut out = vec![E::zero(); xs.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for b in 0..batch {
        for c in 0..ch {
            let s = at(b, c);
            for i in s..s + hw {
                let xh = (xs[i] - mean[c]) * inv_std[c];
                xhat[i] = xh;
                out[i] = gd[c] * xh + bd[c];
            }
        }
    }

    let gamma_d = gamma.data_rc();
    let train = mode == BnMode::Train;
    record(
        "batch_norm",
        vec![batch, ch, h, w],
        out,
        &[x, gamma, beta],
        Box::new(move |g, needs| {
            let mut sum_g = vec![E::zero(); ch];
            let mut sum_gx = vec![E::zero(); ch];
            for b in 0..batch {
                for c in 0..ch {
                    let s = at(b, c);
                    for i in s..s + hw {
                        sum_g[c] = sum_g[c] + g[i];
                        sum_gx[c] = sum_gx[c] + g[i] * xhat[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let n = E::from_usize(count).unwrap();
                let mut gx = vec![E::zero(); g.len()];
                for b in 0..batch {
                    for c in 0..ch {
                        let s = at(b, c);
                        let k = gamma_d[c] * inv_std[c];
                        for i in s..s + hw {
                            gx[i] = if train {
                                k * (g[i] - sum_g[c] / n - xhat[i] * sum_gx[c] / n)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
        }),
    )
}

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

pub fn activation<E: Element>(kind: Activation, x: &Tensor<E>) -> Result<Tensor<E>> {
    match kind {
        Activation::Relu => leaky(x, E::zero(), "relu"),
        Activation::LeakyRelu(slope) => {
            if !(0.0..1.0).contains(&slope) {
                return Err(Error::Config(format!(
                    "leaky_relu slope {slope} outside [0,1)"
                )));
            }
            leaky(x, E::from_f64_lossy(slope), "leaky_relu")
        }
        Activation::Sigmoid => sigmoid(x),
    }
}

pub fn relu<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    activation(Activation::Relu, x)
}

fn leaky<E: Element>(x: &Tensor<E>, slope: E, op: &'static str) -> Result<Tensor<E>> {
    let out = x
        .data()
        .iter()
        .map(|&v| if v > E::zero() { v } else { v * slope })
        .collect();
    let xd = x.data_rc();
    record(
        op,
        x.shape().to_vec(),
        out,
        &[x],
        Box::new(move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter())
                .map(|(&g, &v)| if v > E::zero() { g } else { g * slope })
                .collect();
            vec![Some(gx)]
        }),
    )
}

pub fn sigmoid<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let out: Vec<E> = x
        .data()
        .iter()
        .map(|&v| E::one() / (E::one() + (-v).exp()))
        .collect();
    let y = Rc::new(out.clone());
    record(
        "sigmoid",
        x.shape().to_vec(),
        out,
        &[x],
        Box::new(move |g, _| {
            let gx = g
                .iter()
                .zip(y.iter())
                .map(|(&g, &s)| g * s * (E::one() - s))
                .collect();
            vec![Some(gx)]
        }),
    )
}

/// Mean over spatial positions: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let [batch, ch, h, w] = dims4("global_avg_pool", x)?;
    let hw = h * w;
    let n = E::from_usize(hw).unwrap();
    let out = x
        .data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().fold(E::zero(), |a, &v| a + v) / n)
        .collect();
    record(
        "global_avg_pool",
        vec![batch, ch],
        out,
        &[x],
        Box::new(move |g, _| {
            let gx = g
                .iter()
                .flat_map(|&gv| std::iter::repeat_n(gv / n, hw))
                .collect();
            vec![Some(gx)]
        }),
    )
}

/// Non-overlapping `size×size` max pooling; trailing rows/columns that do
/// not fill a window are dropped.
pub fn max_pool2d<E: Element>(x: &Tensor<E>, size: usize) -> Result<Tensor<E>> {
    let [batch, ch, h, w] = dims4("max_pool2d", x)?;
    if size == 0 || h < size || w < size {
        return Err(Error::dim(
            "max_pool2d",
            format!("window {size} on {h}x{w} input"),
        ));
    }
    let (oh, ow) = (h / size, w / size);
    let xs = x.data();
    let mut out = Vec::with_capacity(batch * ch * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..batch * ch {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * size * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (oi * size + di) * w + oj * size + dj;
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    let in_len = xs.len();
    record(
        "max_pool2d",
        vec![batch, ch, oh, ow],
        out,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![E::zero(); in_len];
            for (&i, &gv) in argmax.iter().zip(g) {
                gx[i] = gx[i] + gv;
            }
            vec![Some(gx)]
        }),
    )
}

fn zip_map<E: Element>(
    op: &'static str,
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
    backward: super::BackwardFn<E>,
) -> Result<Tensor<E>> {
    same_shape(op, a, b)?;
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    record(op, a.shape().to_vec(), out, &[a, b], backward)
}

pub fn add<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    zip_map(
        "add",
        a,
        b,
        |x, y| x + y,
        Box::new(|g, needs| vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]),
    )
}

pub fn sub<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    zip_map(
        "sub",
        a,
        b,
        |x, y| x - y,
        Box::new(|g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|&v| -v).collect()),
            ]
        }),
    )
}

/// Elementwise product.
pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let (ad, bd) = (a.data_rc(), b.data_rc());
    zip_map(
        "mul",
        a,
        b,
        |x, y| x * y,
        Box::new(move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(bd.iter()).map(|(&g, &y)| g * y).collect()),
                needs[1].then(|| g.iter().zip(ad.iter()).map(|(&g, &x)| g * x).collect()),
            ]
        }),
    )
}

fn map_unary<E: Element>(
    op: &'static str,
    x: &Tensor<E>,
    f: impl Fn(E) -> E,
    df: impl Fn(E) -> E + 'static,
) -> Result<Tensor<E>> {
    let out = x.data().iter().map(|&v| f(v)).collect();
    let xd = x.data_rc();
    record(
        op,
        x.shape().to_vec(),
        out,
        &[x],
        Box::new(move |g, _| {
            vec![Some(g.iter().zip(xd.iter()).map(|(&g, &v)| g * df(v)).collect())]
        }),
    )
}

pub fn scale<E: Element>(x: &Tensor<E>, c: E) -> Result<Tensor<E>> {
    map_unary("scale", x, |v| v * c, move |_| c)
}

pub fn add_scalar<E: Element>(x: &Tensor<E>, c: E) -> Result<Tensor<E>> {
    map_unary("add_scalar", x, |v| v + c, |_| E::one())
}

pub fn square<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let two = E::one() + E::one();
    map_unary("square", x, |v| v * v, move |v| two * v)
}

/// Absolute value; the subgradient at zero is zero.
pub fn abs<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    map_unary("abs", x, |v| v.abs(), |v| {
        if v > E::zero() {
            E::one()
        } else if v < E::zero() {
            -E::one()
        } else {
            E::zero()
        }
    })
}

/// Sum of all elements, as a one-element tensor.
pub fn sum<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.data().iter().fold(E::zero(), |a, &v| a + v);
    let n = x.len();
    record(
        "sum",
        vec![1],
        vec![s],
        &[x],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
    )
}

/// Mean of all elements, as a one-element tensor.
pub fn mean<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let n = E::from_usize(x.len()).unwrap();
    scale(&sum(x)?, E::one() / n)
}

fn row_log_softmax<E: Element>(row: &[E], out: &mut [E]) {
    let m = row.iter().copied().fold(E::neg_infinity(), E::max);
    let lse = row.iter().fold(E::zero(), |a, &v| a + (v - m).exp()).ln() + m;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Row-wise `log softmax` of a `[B,C]` tensor, max-subtracted.
pub fn log_softmax<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let [batch, classes] = dims2("log_softmax", x)?;
    let mut out = vec![E::zero(); batch * classes];
    for (row, o) in x.data().chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        row_log_softmax(row, o);
    }
    let probs: Vec<E> = out.iter().map(|v| v.exp()).collect();
    record(
        "log_softmax",
        vec![batch, classes],
        out,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![E::zero(); g.len()];
            for ((gr, pr), o) in g
                .chunks_exact(classes)
                .zip(probs.chunks_exact(classes))
                .zip(gx.chunks_exact_mut(classes))
            {
                let s = gr.iter().fold(E::zero(), |a, &v| a + v);
                for ((o, &gv), &p) in o.iter_mut().zip(gr).zip(pr) {
                    *o = gv - p * s;
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Row-wise softmax of a `[B,C]` tensor, max-subtracted.
pub fn softmax<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let [batch, classes] = dims2("softmax", x)?;
    let mut out = vec![E::zero(); batch * classes];
    for (row, o) in x.data().chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let m = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut s = E::zero();
        for (o, &v) in o.iter_mut().zip(row) {
            *o = (v - m).exp();
            s = s + *o;
        }
        o.iter_mut().for_each(|v| *v = *v / s);
    }
    let y = Rc::new(out.clone());
    record(
        "softmax",
        vec![batch, classes],
        out,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![E::zero(); g.len()];
            for ((gr, yr), o) in g
                .chunks_exact(classes)
                .zip(y.chunks_exact(classes))
                .zip(gx.chunks_exact_mut(classes))
            {
                let dot = gr.iter().zip(yr).fold(E::zero(), |a, (&g, &y)| a + g * y);
                for ((o, &gv), &yv) in o.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        }),
    )
}

/// Picks `x[b, index[b]]` from a `[B,C]` tensor, giving `[B]`.
pub fn pick<E: Element>(x: &Tensor<E>, index: &[usize]) -> Result<Tensor<E>> {
    let [batch, classes] = dims2("pick", x)?;
    if index.len() != batch {
        return Err(Error::dim(
            "pick",
            format!("{} indices for batch of {batch}", index.len()),
        ));
    }
    if let Some(&bad) = index.iter().find(|&&i| i >= classes) {
        return Err(Error::Data(format!("index {bad} out of range for {classes} classes")));
    }
    let out = index
        .iter()
        .enumerate()
        .map(|(b, &i)| x.data()[b * classes + i])
        .collect();
    let index = index.to_vec();
    record(
        "pick",
        vec![batch],
        out,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![E::zero(); batch * classes];
            for (b, &i) in index.iter().enumerate() {
                gx[b * classes + i] = g[b];
            }
            vec![Some(gx)]
        }),
    )
}
