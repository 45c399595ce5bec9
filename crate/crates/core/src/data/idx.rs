//! IDX image/label files (big-endian headers, unsigned-byte payloads).

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, FormatKind, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const IMAGES4_MAGIC: u32 = 0x0000_0804;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(
                FormatKind::Truncated,
                offset as u64,
                format!("header ends at {} bytes", bytes.len()),
            )
        })
}

fn payload(bytes: &[u8], start: usize, expected: usize) -> Result<&[u8]> {
    let have = bytes.len().saturating_sub(start);
    if have < expected {
        return Err(Error::format(
            FormatKind::Truncated,
            bytes.len() as u64,
            format!("payload has {have} of {expected} bytes"),
        ));
    }
    if have > expected {
        return Err(Error::format(
            FormatKind::CountMismatch,
            (start + expected) as u64,
            format!("{} trailing bytes after payload", have - expected),
        ));
    }
    Ok(&bytes[start..])
}

/// Parses an image file into `([N, C, H, W], pixels in [0,1])`.
///
/// Three-dimensional files (`0x803`) are single-channel; four-dimensional
/// ones (`0x804`) carry an explicit channel axis.
pub fn read_idx_images(bytes: &[u8]) -> Result<([usize; 4], Vec<f32>)> {
    let magic = read_u32(bytes, 0)?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        IMAGES4_MAGIC => 4,
        _ => {
            return Err(Error::format(
                FormatKind::BadMagic,
                0,
                format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
            ))
        }
    };
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * i)? as usize);
    }
    let shape = if rank == 3 {
        [dims[0], 1, dims[1], dims[2]]
    } else {
        [dims[0], dims[1], dims[2], dims[3]]
    };
    let start = 4 + 4 * rank;
    let total = shape.iter().product();
    let raw = payload(bytes, start, total)?;
    Ok((shape, raw.iter().map(|&b| f32::from(b) / 255.0).collect()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(
            FormatKind::BadMagic,
            0,
            format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair. The class count is one past the largest
/// label (at least two).
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (shape, pixels) = read_idx_images(&read(images.as_ref())?)?;
    let labels = read_idx_labels(&read(labels.as_ref())?)?;
    if labels.len() != shape[0] {
        return Err(Error::format(
            FormatKind::CountMismatch,
            4,
            format!("{} labels for {} images", labels.len(), shape[0]),
        ));
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(pixels, shape, labels, classes, split)
}

/// Encodes pixels as `round(v·255)` bytes; values must lie in `[0,1]`.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [n, c, h, w] = ds.shape();
    let mut img = Vec::with_capacity(20 + ds.pixels().len());
    if c == 1 {
        img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [n, h, w] {
            img.extend_from_slice(&(d as u32).to_be_bytes());
        }
    } else {
        img.extend_from_slice(&IMAGES4_MAGIC.to_be_bytes());
        for d in [n, c, h, w] {
            img.extend_from_slice(&(d as u32).to_be_bytes());
        }
    }
    for &v in ds.pixels() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!("pixel {v} outside [0,1]; IDX stores bytes")));
        }
        img.push((v * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &y in ds.labels() {
        let b = u8::try_from(y).map_err(|_| Error::Data(format!("label {y} exceeds a byte")))?;
        lab.push(b);
    }
    Ok((img, lab))
}

pub fn write_idx(ds: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (img, lab) = encode_idx(ds)?;
    fs::write(images.as_ref(), img).map_err(|e| Error::io(images.as_ref(), e))?;
    fs::write(labels.as_ref(), lab).map_err(|e| Error::io(labels.as_ref(), e))
}
