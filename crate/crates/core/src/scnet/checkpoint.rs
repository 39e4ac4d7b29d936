//! Binary checkpoint: `SCN1`, u32 levels, u32 base width, u32 input channels,
//! u32 scalar width, u64 value count, then every parameter tensor (running
//! statistics included) as little-endian f32 in layout order.

use std::path::Path;

use super::net::{ScNetParams, Topology};
use crate::error::{Error, Result};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"SCN1";
const HEADER_LEN: usize = 4 + 4 * 4 + 8;

pub fn encode<T: Real>(params: &ScNetParams<T>) -> Vec<u8> {
    let topo = params.topology();
    let count: usize = params.tensors().iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(topo.levels as u32).to_le_bytes());
    out.extend_from_slice(&(topo.base_width as u32).to_le_bytes());
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&4u32.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for v in params.tensors().iter().flatten() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes a checkpoint, verifying it against `expected` when given.
pub fn decode<T: Real>(bytes: &[u8], expected: Option<Topology>) -> Result<ScNetParams<T>> {
    let bad = |reason: String| Error::Format {
        format: "checkpoint",
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing SCN1 header".into()));
    }
    let topo = Topology {
        levels: u32_at(bytes, 4) as usize,
        base_width: u32_at(bytes, 8) as usize,
    };
    let in_channels = u32_at(bytes, 12);
    let scalar = u32_at(bytes, 16);
    if in_channels != 1 || scalar != 4 {
        return Err(bad(format!(
            "unsupported input channels {in_channels} or scalar width {scalar}"
        )));
    }
    if let Some(exp) = expected {
        if exp != topo {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint topology {topo:?} differs from configured {exp:?}"
            )));
        }
    }
    let count = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count.saturating_mul(4) {
        return Err(bad(format!(
            "expected {count} values, payload holds {} bytes",
            payload.len()
        )));
    }
    let template = ScNetParams::<T>::init(topo, 0)?;
    let expected_count: usize = template.tensors().iter().map(Vec::len).sum();
    if expected_count != count {
        return Err(Error::CheckpointMismatch(format!(
            "{count} values stored, topology {topo:?} needs {expected_count}"
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
    let tensors = template
        .tensors()
        .iter()
        .map(|t| values.by_ref().take(t.len()).collect())
        .collect();
    ScNetParams::from_tensors(topo, tensors)
}

pub fn save<T: Real>(params: &ScNetParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path, expected: Option<Topology>) -> Result<ScNetParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_for_f32() {
        let p = ScNetParams::<f32>::init(Topology { levels: 2, base_width: 4 }, 3).unwrap();
        let bytes = encode(&p);
        let q: ScNetParams<f32> = decode(&bytes, Some(p.topology())).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn topology_mismatch_is_reported() {
        let p = ScNetParams::<f32>::init(Topology { levels: 2, base_width: 4 }, 3).unwrap();
        let bytes = encode(&p);
        let err = decode::<f32>(&bytes, Some(Topology { levels: 3, base_width: 4 })).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let p = ScNetParams::<f32>::init(Topology { levels: 1, base_width: 2 }, 0).unwrap();
        let bytes = encode(&p);
        assert!(decode::<f32>(&bytes[..bytes.len() - 1], None).is_err());
        assert!(decode::<f32>(b"SCN0", None).is_err());
    }
}
