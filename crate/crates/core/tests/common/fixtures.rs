//! Hand-assembled IDX files and small run configurations.

use std::fs;
use std::path::{Path, PathBuf};

use afd::data::{Method, RunConfig};
use afd::FormatKind;

/// Big-endian IDX image file with `n` single-channel `h × w` images
/// (magic 0x00000803); pixel `i` of the whole payload is `pixel(i)`.
pub fn idx_images(n: u32, h: u32, w: u32, pixel: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x03];
    for d in [n, h, w] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend((0..(n * h * w) as usize).map(pixel));
    b
}

/// IDX label file (magic 0x00000801).
pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 0x08, 0x01];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// The ten-image 28×28 fixture: pixel bytes cycle through 0..=255 and
/// labels are `i % 3`.
pub fn ten_image_fixture() -> (Vec<u8>, Vec<u8>) {
    let labels: Vec<u8> = (0..10).map(|i| (i % 3) as u8).collect();
    (idx_images(10, 28, 28, |i| (i % 256) as u8), idx_labels(&labels))
}

/// Three malformed image/label pairs with the error class each must raise.
pub fn malformed_fixtures() -> Vec<(&'static str, Vec<u8>, Vec<u8>, FormatKind)> {
    let (img, lab) = ten_image_fixture();
    let mut bad_magic = img.clone();
    bad_magic[3] = 0x02;
    let truncated = img[..img.len() - 100].to_vec();
    let short_labels = idx_labels(&[0, 1, 2, 0, 1, 2, 0, 1, 2]);
    vec![
        ("bad magic", bad_magic, lab.clone(), FormatKind::BadMagic),
        ("truncated payload", truncated, lab, FormatKind::Truncated),
        ("count mismatch", img, short_labels, FormatKind::CountMismatch),
    ]
}

pub fn write_pair(dir: &Path, name: &str, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
    let (pi, pl) = (dir.join(format!("{name}-images.idx")), dir.join(format!("{name}-labels.idx")));
    fs::write(&pi, images).unwrap();
    fs::write(&pl, labels).unwrap();
    (pi, pl)
}

/// A run small enough for unit-speed tests: 3 classes, 16×16 images.
pub fn small_config(method: Method, out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.method = method;
    c.synth_classes = 3;
    c.synth_train_per_class = 20;
    c.synth_test_per_class = 8;
    c.synth_image_size = 16;
    c.batch_size = 16;
    c.epochs = 2;
    c.milestones_logit = vec![1];
    c.milestones_adv = vec![1];
    c.disc_width = 8;
    c.out_dir = out.to_path_buf();
    c
}

/// The desk-scale comparison setup: 6 classes, 1200 train / 600 test
/// images at noise 0.35, a tiny-a pair, 20 epochs.
pub fn desk_config(method: Method, seed: u64, out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.method = method;
    c.seed = seed;
    c.synth_classes = 6;
    c.synth_train_per_class = 200;
    c.synth_test_per_class = 100;
    c.synth_noise = 0.35;
    c.archs = vec!["tiny-a".into()];
    c.nets = 2;
    c.epochs = 20;
    c.batch_size = DESK_BATCH;
    c.out_dir = out.to_path_buf();
    c
}

/// Batch size of the desk-scale comparison (38 batches per epoch).
pub const DESK_BATCH: usize = 32;
