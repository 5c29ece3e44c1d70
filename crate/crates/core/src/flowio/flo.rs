//! Middlebury `.flo` layout: the float `202021.25` as a little-endian tag,
//! `i32` width, `i32` height, then `width * height` interleaved `(u, v)`
//! little-endian `f32` pairs in row-major order.

use std::fs;
use std::path::Path;

use super::{FlowError, FlowField};

/// Tag value; its little-endian bytes spell `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;

const HEADER_LEN: usize = 12;

/// What to do with NaN/Inf components found while decoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NonFinitePolicy {
    #[default]
    Reject,
    /// Replace offending components with `0.0`.
    ZeroFill,
}

/// Decodes a `.flo` byte buffer. The second value counts components that
/// were zero-filled (always 0 under [`NonFinitePolicy::Reject`]).
pub fn decode_flo(bytes: &[u8], policy: NonFinitePolicy) -> Result<(FlowField, usize), FlowError> {
    if bytes.len() < 4 {
        return Err(FlowError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let tag = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if tag.to_bits() != FLO_MAGIC.to_bits() {
        return Err(FlowError::BadMagic {
            expected: FLO_MAGIC,
            found: tag,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FlowError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap()) as i64;
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap()) as i64;
    if width < 1 || height < 1 {
        return Err(FlowError::BadDimensions { width, height });
    }
    let expected = HEADER_LEN as u64 + (width as u64) * (height as u64) * 8;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(FlowError::Truncated { expected, found });
    }
    if found > expected {
        return Err(FlowError::TrailingData {
            extra: found - expected,
        });
    }

    let n = (width * height) as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut filled = 0;
    for (pixel, pair) in bytes[HEADER_LEN..].chunks_exact(8).enumerate() {
        let mut a = f32::from_le_bytes(pair[0..4].try_into().unwrap());
        let mut b = f32::from_le_bytes(pair[4..8].try_into().unwrap());
        for c in [&mut a, &mut b] {
            if !c.is_finite() {
                match policy {
                    NonFinitePolicy::Reject => return Err(FlowError::NonFinite { pixel }),
                    NonFinitePolicy::ZeroFill => {
                        *c = 0.0;
                        filled += 1;
                    }
                }
            }
        }
        u.push(a);
        v.push(b);
    }
    Ok((FlowField::new(width as usize, height as usize, u, v)?, filled))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + flow.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a `.flo` file, rejecting non-finite values.
pub fn read_flow_file(path: impl AsRef<Path>) -> Result<FlowField, FlowError> {
    read_flow_file_with(path, NonFinitePolicy::Reject).map(|(f, _)| f)
}

pub fn read_flow_file_with(path: impl AsRef<Path>, policy: NonFinitePolicy) -> Result<(FlowField, usize), FlowError> {
    let bytes = fs::read(path)?;
    decode_flo(&bytes, policy)
}

pub fn write_flow_file(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), FlowError> {
    fs::write(path, encode_flo(flow))?;
    Ok(())
}
