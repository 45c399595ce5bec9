//! Architecture strings.
//!
//! An architecture is either a preset name or a `-`-separated block list:
//!
//! * `conv:C:K:S`  convolution to `C` channels, `K×K` kernel, stride `S`,
//!   zero padding `K/2`, no bias
//! * `bn`          batch normalization
//! * `relu`        rectifier
//! * `pool:P`      non-overlapping `P×P` max pooling
//!
//! The classifier head (global average pool + linear) is always appended
//! and is not part of the string.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
    },
    Bn,
    Relu,
    Pool(usize),
}

/// Named presets. `tiny-b` doubles every width of `tiny-a`, so the two
/// disagree in last-stage channels (32 vs 64).
pub const PRESETS: &[(&str, &str)] = &[
    (
        "tiny-a",
        "conv:16:3:1-bn-relu-pool:2-conv:32:3:1-bn-relu-pool:2",
    ),
    (
        "tiny-b",
        "conv:32:3:1-bn-relu-pool:2-conv:64:3:1-bn-relu-pool:2",
    ),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn positive(tok: &str, field: &str) -> Result<usize> {
    match field.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Config(format!(
            "block `{tok}`: `{field}` is not a positive integer"
        ))),
    }
}

/// Parses a preset name or block string.
pub fn parse_arch(spec: &str) -> Result<Vec<Block>> {
    let spec = spec.trim();
    let body = preset(spec).unwrap_or(spec);
    if body.is_empty() {
        return Err(Error::Config("empty architecture".into()));
    }
    let mut blocks = Vec::new();
    for tok in body.split('-') {
        let fields: Vec<&str> = tok.split(':').collect();
        let block = match fields.as_slice() {
            ["conv", c, k, s] => Block::Conv {
                channels: positive(tok, c)?,
                kernel: positive(tok, k)?,
                stride: positive(tok, s)?,
            },
            ["bn"] => Block::Bn,
            ["relu"] => Block::Relu,
            ["pool", p] => Block::Pool(positive(tok, p)?),
            _ => {
                return Err(Error::Config(format!(
                    "unrecognized block `{tok}` in architecture `{spec}`"
                )))
            }
        };
        blocks.push(block);
    }
    if !blocks.iter().any(|b| matches!(b, Block::Conv { .. })) {
        return Err(Error::Config(format!(
            "architecture `{spec}` has no convolution"
        )));
    }
    if matches!(blocks.first(), Some(Block::Bn)) {
        return Err(Error::Config("`bn` cannot precede the first convolution".into()));
    }
    Ok(blocks)
}
