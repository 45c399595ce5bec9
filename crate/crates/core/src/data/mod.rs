//! Datasets, deterministic batching and run configuration.

mod config;
mod idx;
mod synth;

pub use config::{DataSource, Method, RunConfig};
pub use idx::{encode_idx, load_idx, read_idx_images, read_idx_labels, write_idx};
pub use synth::{synth_blobs, templates, BLOB_PEAKS, MAX_CLASSES};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::InputShape;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images `[N,C,H,W]` in row-major order with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<f32>,
    shape: [usize; 4],
    labels: Vec<usize>,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        pixels: Vec<f32>,
        shape: [usize; 4],
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let [n, c, h, w] = shape;
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Data(format!("empty dataset shape {shape:?}")));
        }
        if pixels.len() != n * c * h * w {
            return Err(Error::Data(format!(
                "{} pixel values for shape {shape:?}",
                pixels.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::Data(format!("{} labels for {n} images", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            pixels,
            shape,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape {
            channels: self.shape[1],
            height: self.shape[2],
            width: self.shape[3],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    fn image_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Same samples with a wider class range.
    pub fn with_classes(self, num_classes: usize) -> Result<Self> {
        Self::new(self.pixels, self.shape, self.labels, num_classes, self.split)
    }

    /// Gathers the given samples into a batch tensor and label list.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("sample {i} out of range")));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let [_, c, h, w] = self.shape;
        Ok((Tensor::new(vec![indices.len(), c, h, w], data)?, labels))
    }

    /// Applies `(x - mean_c) / std_c` per channel.
    pub fn standardize(&mut self, st: &Standardizer) -> Result<()> {
        let [_, c, h, w] = self.shape;
        if st.mean.len() != c {
            return Err(Error::Data(format!(
                "standardizer has {} channels, data has {c}",
                st.mean.len()
            )));
        }
        let hw = h * w;
        for (i, v) in self.pixels.iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = (*v - st.mean[ch]) / st.std[ch];
        }
        Ok(())
    }
}

/// Per-channel statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let [n, c, h, w] = train.shape;
        let hw = h * w;
        let mut mean = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for i in 0..n {
            for (ch, plane) in train.image(i).chunks_exact(hw).enumerate() {
                for &v in plane {
                    mean[ch] += f64::from(v);
                    sq[ch] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (n * hw) as f64;
        let mut std = vec![0.0f32; c];
        let mut mean32 = vec![0.0f32; c];
        for ch in 0..c {
            let m = mean[ch] / count;
            let var = (sq[ch] / count - m * m).max(0.0);
            mean32[ch] = m as f32;
            std[ch] = if var > 1e-12 { var.sqrt() as f32 } else { 1.0 };
        }
        Self { mean: mean32, std }
    }
}

/// Sample order for one epoch: a permutation that depends only on
/// `(seed, epoch)`, cut into batches; the last batch may be short.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, "batches", epoch as u64));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
