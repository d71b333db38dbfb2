//! Feature frame, little-endian:
//!
//! | field   | bytes | value            |
//! |---------|-------|------------------|
//! | magic   | 4     | `SSFV`           |
//! | version | 2     | `1`              |
//! | dtype   | 1     | `1` = f32        |
//! | d       | 4     | feature count    |
//! | payload | 4·d   | f32 values       |
//!
//! Only the values travel; provenance and labels never reach the edge.

use super::FeatureVector;
use crate::error::FrameError;

pub const MAGIC: &[u8; 4] = b"SSFV";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4;

pub fn serialize_features(h: &FeatureVector) -> Vec<u8> {
    let d = u32::try_from(h.dim()).expect("feature dimension fits in u32");
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * h.dim());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.extend_from_slice(&d.to_le_bytes());
    for &v in &h.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Decodes a frame into a benign, clean, unlabeled feature vector.
pub fn deserialize_features(bytes: &[u8]) -> Result<FeatureVector, FrameError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(bad_magic(bytes));
        }
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(bad_magic(bytes));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FrameError::Version(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(FrameError::Dtype(bytes[6]));
    }
    let d = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    let needed = d * 4;
    if payload.len() < needed {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN + needed,
            have: bytes.len(),
        });
    }
    if payload.len() > needed {
        return Err(FrameError::Length {
            declared: d,
            actual: payload.len() / 4,
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(FeatureVector::benign(values, None))
}

fn bad_magic(bytes: &[u8]) -> FrameError {
    FrameError::BadMagic {
        expected: "SSFV".into(),
        found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
    }
}
