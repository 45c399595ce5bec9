use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary greyscale PGM (`P5`, maxval 255) of a `[H, W]` map with values in
/// `[0, 1]`; each value `v` becomes `round(v · 255)`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let &[h, w] = map.shape() else {
        return Err(Error::dim("pgm", format!("expected [H, W], got {:?}", map.shape())));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in map.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!("heatmap value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn export_pgm(map: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_pgm(map)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
fn decode_pgm(bytes: &[u8]) -> (usize, usize, Vec<f32>) {
    let mut parts = bytes.splitn(4, |&b| b == b'\n');
    let mut line = || std::str::from_utf8(parts.next().unwrap()).unwrap().to_string();
    assert_eq!(line(), "P5");
    let dims = line();
    let (w, h) = dims.split_once(' ').unwrap();
    let (w, h): (usize, usize) = (w.parse().unwrap(), h.parse().unwrap());
    assert_eq!(line(), "255");
    let payload = parts.next().unwrap();
    assert_eq!(payload.len(), w * h);
    (h, w, payload.iter().map(|&b| f32::from(b) / 255.0).collect())
}
