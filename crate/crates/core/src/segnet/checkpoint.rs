//! Parameter blobs: `b"SEGN"`, then little-endian `u32` fields
//! `version, in_channels, width×3, classes, param_count`, then the
//! parameters as little-endian `f32`.

use std::fs;
use std::path::Path;

use super::{LayerSpec, Real, SegmenterParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SEGN";
const VERSION: u32 = 1;
const HEADER_FIELDS: usize = 7;

pub fn encode_checkpoint<T: Real>(params: &SegmenterParams<T>) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::with_capacity(4 + 4 * HEADER_FIELDS + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let fields = [
        VERSION,
        spec.in_channels as u32,
        spec.widths[0] as u32,
        spec.widths[1] as u32,
        spec.widths[2] as u32,
        spec.classes as u32,
        params.len() as u32,
    ];
    for f in fields {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for &v in params.values() {
        out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SegmenterParams<T>> {
    let header = 4 + 4 * HEADER_FIELDS;
    if bytes.len() < header || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing SEGN header".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if field(0) != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {}", field(0))));
    }
    let spec = LayerSpec { in_channels: field(1), widths: [field(2), field(3), field(4)], classes: field(5) };
    spec.validate()?;
    let count = field(6);
    if count != spec.param_count() || bytes.len() != header + 4 * count {
        return Err(Error::Format(format!(
            "checkpoint declares {count} parameters; spec needs {} and payload holds {}",
            spec.param_count(),
            (bytes.len() - header) / 4
        )));
    }
    let values = bytes[header..]
        .chunks_exact(4)
        .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
        .collect();
    SegmenterParams::from_values(spec, values)
}

pub fn write_checkpoint<T: Real>(path: impl AsRef<Path>, params: &SegmenterParams<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SegmenterParams<T>> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_roundtrip_is_byte_exact() {
        let p = SegmenterParams::<f32>::init(LayerSpec::new(1, 3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"SEGN");
        let back: SegmenterParams<f32> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let p = SegmenterParams::<f32>::init(LayerSpec::new(1, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 4]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint::<f32>(&wrong).is_err());
    }
}
