//! On-disk raster formats.
//!
//! The native format is a 16-byte header (`b"GRID"`, then little-endian
//! `u32` height, width and channel count) followed by `f32` little-endian
//! samples, one full row-major plane after another. An 8-bit binary PGM
//! (P5) export exists for eyeballing results in an image viewer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Grid, LabelField, MultiGrid};
use crate::error::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"GRID";

pub fn encode_grid(g: &MultiGrid) -> Vec<u8> {
    let (h, w) = g.dims();
    let mut out = Vec::with_capacity(16 + 4 * h * w * g.channels());
    out.extend_from_slice(GRID_MAGIC);
    for v in [h, w, g.channels()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for plane in g.planes() {
        for &v in plane.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<MultiGrid> {
    if bytes.len() < 16 || &bytes[..4] != GRID_MAGIC {
        return Err(Error::Format("missing GRID header".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (field(0), field(1), field(2));
    let n =
        h.checked_mul(w).and_then(|n| n.checked_mul(c)).ok_or_else(|| Error::Format("grid extent overflows".into()))?;
    if c == 0 || bytes.len() != 16 + 4 * n {
        return Err(Error::Format(format!(
            "expected {} payload bytes for {h}x{w}x{c}, found {}",
            4 * n,
            bytes.len() - 16
        )));
    }
    let values: Vec<f64> =
        bytes[16..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    let planes = values.chunks_exact(h * w).map(|p| Grid::new(h, w, p.to_vec())).collect::<Result<Vec<_>>>()?;
    MultiGrid::new(planes)
}

pub fn write_grid(path: impl AsRef<Path>, g: &MultiGrid) -> Result<()> {
    fs::write(path, encode_grid(g))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<MultiGrid> {
    decode_grid(&fs::read(path)?)
}

/// Labels travel as a single-channel grid of class indices.
pub fn label_to_grid(l: &LabelField) -> MultiGrid {
    let (h, w) = l.dims();
    Grid::from_raw(h, w, l.as_slice().iter().map(|&v| v as f64).collect()).into()
}

pub fn grid_to_label(g: &MultiGrid, classes: usize) -> Result<LabelField> {
    if g.channels() != 1 {
        return Err(Error::Format(format!("label grid has {} channels", g.channels())));
    }
    let (h, w) = g.dims();
    let data = g
        .plane(0)
        .as_slice()
        .iter()
        .map(|&v| {
            if (0.0..256.0).contains(&v) && v.fract() == 0.0 {
                Ok(v as u8)
            } else {
                Err(Error::Format(format!("label value {v} is not a class index")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelField::new(h, w, classes, data)
}

/// Binary 8-bit PGM; values are clamped to [0,1] and scaled to 0..=255.
pub fn write_pgm(mut out: impl Write, g: &Grid) -> Result<()> {
    let (h, w) = g.dims();
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = g.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm(path: impl AsRef<Path>, g: &Grid) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(&mut buf, g)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm(mut input: impl Read) -> Result<Grid> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    // Header: magic, width, height, maxval separated by whitespace, with
    // optional `#` comments, then a single whitespace byte before the raster.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("unsupported PGM magic {}", tokens[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field {s}")));
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    Grid::new(h, w, raster.iter().map(|&b| b as f64 / maxval as f64).collect())
}
