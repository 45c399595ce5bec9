//! Post-training comparison of co-trained networks: feature-map distance
//! and similarity statistics, Grad-CAM heatmaps and PGM export.

mod gradcam;
mod pgm;

pub use gradcam::{cam_from_gradients, grad_cam};
pub use pgm::{encode_pgm, export_pgm};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, Pass};
use crate::tensor::Tensor;
use crate::trainer::EVAL_BATCH;

/// Sample-averaged feature-map statistics of a network pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityReport {
    /// Mean absolute difference per element.
    pub l1: f64,
    /// Root-mean-square difference per element.
    pub l2: f64,
    pub cosine: f64,
    pub samples: usize,
}

/// Running sums behind a [`SimilarityReport`].
#[derive(Debug, Clone, Default)]
pub struct SimilarityAccumulator {
    l1: f64,
    l2: f64,
    cosine: f64,
    samples: usize,
}

fn pair_stats(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let (mut l1, mut sq, mut dot, mut na, mut nb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        l1 += (x - y).abs();
        sq += (x - y) * (x - y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    // Zero vectors: identical ones count as aligned, otherwise orthogonal.
    let cosine = match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb).sqrt()).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    };
    (l1 / n, (sq / n).sqrt(), cosine)
}

/// Per-channel spatial means of a `[C, H·W]` sample, truncated to `keep`.
fn channel_means(sample: &[f32], channels: usize, keep: usize) -> Vec<f64> {
    let hw = sample.len() / channels;
    sample
        .chunks_exact(hw)
        .take(keep)
        .map(|c| c.iter().map(|&v| f64::from(v)).sum::<f64>() / hw as f64)
        .collect()
}

impl SimilarityAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a batch of paired `[B, C, H, W]` feature maps.
    ///
    /// Equal shapes are compared as flattened vectors. Otherwise each side
    /// is reduced to per-channel spatial means over the first
    /// `min(C_a, C_b)` channels, so vectors of equal length are compared.
    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        let (&[ba, ca, ..], &[bb, cb, ..]) = (a.shape(), b.shape()) else {
            return Err(Error::dim(
                "feature_similarity",
                format!("expected [B, C, H, W] maps, got {:?} and {:?}", a.shape(), b.shape()),
            ));
        };
        if a.ndim() != 4 || b.ndim() != 4 || ba != bb {
            return Err(Error::dim(
                "feature_similarity",
                format!("unpaired feature maps {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        if ba == 0 {
            return Ok(());
        }
        let same = a.shape() == b.shape();
        let keep = ca.min(cb);
        let wide = |t: &[f32]| t.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        for (sa, sb) in a.data().chunks_exact(a.len() / ba).zip(b.data().chunks_exact(b.len() / bb)) {
            let (va, vb) = if same {
                (wide(sa), wide(sb))
            } else {
                (channel_means(sa, ca, keep), channel_means(sb, cb, keep))
            };
            let (l1, l2, cos) = pair_stats(&va, &vb);
            self.l1 += l1;
            self.l2 += l2;
            self.cosine += cos;
            self.samples += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<SimilarityReport> {
        if self.samples == 0 {
            return Err(Error::Data("no samples compared".into()));
        }
        let n = self.samples as f64;
        Ok(SimilarityReport {
            l1: self.l1 / n,
            l2: self.l2 / n,
            cosine: self.cosine / n,
            samples: self.samples,
        })
    }
}

/// Compares the eval-mode last-stage feature maps of two networks over
/// every sample of `data`.
pub fn feature_similarity(a: &mut Network, b: &mut Network, data: &Dataset) -> Result<SimilarityReport> {
    let pass = Pass::eval();
    let mut acc = SimilarityAccumulator::new();
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let (x, _) = data.gather(chunk)?;
        let fa = a.extract(&x, &pass)?;
        let fb = b.extract(&x, &pass)?;
        acc.add(&fa, &fb)?;
    }
    acc.finish()
}
