//! Synthetic blob images: each class is a fixed arrangement of Gaussian
//! bumps centred in the image quadrants, plus i.i.d. Gaussian pixel noise.

use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Peak intensity of the bump in each quadrant.
pub const BLOB_PEAKS: [f32; 4] = [0.4, 0.6, 0.8, 1.0];

/// Largest class count with a distinct quadrant pattern (non-empty subsets
/// of four quadrants).
pub const MAX_CLASSES: usize = 15;

/// Noise-free `[size, size]` template of every class.
///
/// Class `k` lights the quadrants given by the bits of `k + 1`; each lit
/// quadrant holds a bump at its centre. Bump widths and heights differ per quadrant, so
/// a pattern is recognisable from local content alone and not only from
/// absolute position (which global pooling discards).
pub fn templates(num_classes: usize, image_size: usize) -> Result<Vec<Vec<f32>>> {
    if !(2..=MAX_CLASSES).contains(&num_classes) {
        return Err(Error::Config(format!(
            "synthetic blobs support 2..={MAX_CLASSES} classes, got {num_classes}"
        )));
    }
    if image_size < 4 {
        return Err(Error::Config(format!("image_size {image_size} below 4")));
    }
    let s = image_size as f32;
    let sigmas = [0.06 * s, 0.095 * s, 0.13 * s, 0.165 * s];
    let centres = [
        (0.25 * s, 0.25 * s),
        (0.25 * s, 0.75 * s),
        (0.75 * s, 0.25 * s),
        (0.75 * s, 0.75 * s),
    ];
    Ok((0..num_classes)
        .map(|k| {
            let code = k + 1;
            let mut t = vec![0.0f32; image_size * image_size];
            for (q, &(cy, cx)) in centres.iter().enumerate() {
                if code & (1 << q) == 0 {
                    continue;
                }
                for y in 0..image_size {
                    for x in 0..image_size {
                        let dy = y as f32 + 0.5 - cy;
                        let dx = x as f32 + 0.5 - cx;
                        t[y * image_size + x] +=
                            BLOB_PEAKS[q] * (-(dy * dy + dx * dx) / (2.0 * sigmas[q] * sigmas[q])).exp();
                    }
                }
            }
            t
        })
        .collect())
}

/// Balanced single-channel dataset; sample `i` has label `i % num_classes`.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    noise_std: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be positive".into()));
    }
    let noise = Normal::new(0.0f32, noise_std as f32)
        .map_err(|e| Error::Config(format!("noise_std {noise_std}: {e}")))?;
    let temps = templates(num_classes, image_size)?;
    let n = num_classes * per_class;
    let mut rng = rng::stream(seed, "synth", 0);
    let mut pixels = Vec::with_capacity(n * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        labels.push(k);
        pixels.extend(temps[k].iter().map(|&v| v + noise.sample(&mut rng)));
    }
    Dataset::new(pixels, [n, 1, image_size, image_size], labels, num_classes, split)
}
