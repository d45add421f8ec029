//! Binary model format.
//!
//! ```text
//! "DLORBF1\0"                      8 bytes
//! q, l, n, m                       u32 little-endian each
//! sigma[q]                         f64 little-endian
//! mu[q * l * m]                    f64, center-major
//! W[l * n * (m + 1) * q]           f64, row-major; the last block is the target head
//! crc32                            u32 little-endian over every preceding byte
//! ```
//!
//! The target head is written out in full. On load it is matched back to the
//! first feature block with identical weights, which restores the alias.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rbfn::{Dims, Head, NetworkError, RbfNetwork};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"DLORBF1\0";
const MAGIC_FAMILY: &[u8; 6] = b"DLORBF";
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("model format version mismatch: found {found:?}")]
    VersionMismatch { found: String },
    #[error("dimension mismatch: expected {expected:?}, file has {found:?}")]
    DimensionMismatch { expected: Dims, found: Dims },
    #[error("corrupt model payload: {0}")]
    CorruptPayload(String),
    #[error("target head matches no feature block")]
    UnresolvedTargetAlias,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn to_bytes<T: Real>(net: &RbfNetwork<T>) -> Vec<u8> {
    let d = net.dims();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (d.q + d.q * d.input_len() + d.modeled_rows() * d.q) + 4);
    buf.extend_from_slice(MAGIC);
    for v in [d.q, d.l, d.n, d.m] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let mut put = |xs: &[T]| {
        for x in xs {
            buf.extend_from_slice(&x.f64().to_le_bytes());
        }
    };
    put(net.widths());
    put(net.centers());
    put(net.weights());
    let target = net.block_range(Head::Target);
    put(&net.weights()[target.start * d.q..target.end * d.q]);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<RbfNetwork<T>, ModelFileError> {
    if bytes.len() < 8 {
        return Err(ModelFileError::CorruptPayload("file shorter than magic".into()));
    }
    if &bytes[..8] != MAGIC {
        if &bytes[..6] == MAGIC_FAMILY {
            return Err(ModelFileError::VersionMismatch {
                found: String::from_utf8_lossy(&bytes[..8]).trim_end_matches('\0').to_string(),
            });
        }
        return Err(ModelFileError::CorruptPayload("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(ModelFileError::CorruptPayload("truncated header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().expect("4 bytes")) as usize;
    let dims = Dims { q: u32_at(8), l: u32_at(12), n: u32_at(16), m: u32_at(20) };
    if dims.q == 0 || dims.l == 0 || dims.n == 0 || dims.m == 0 {
        return Err(ModelFileError::CorruptPayload(format!("degenerate dimensions {dims:?}")));
    }
    let counts = [dims.q, dims.q * dims.input_len(), dims.modeled_rows() * dims.q];
    let expected_len = counts
        .iter()
        .try_fold(HEADER_LEN, |acc, c| c.checked_mul(8).and_then(|b| acc.checked_add(b)))
        .ok_or_else(|| ModelFileError::CorruptPayload("dimension overflow".into()))?;
    if body.len() != expected_len {
        return Err(ModelFileError::CorruptPayload(format!(
            "payload is {} bytes, header implies {expected_len}",
            body.len()
        )));
    }
    if crc32fast::hash(body) != stored {
        return Err(ModelFileError::CorruptPayload("checksum mismatch".into()));
    }

    let mut off = HEADER_LEN;
    let mut take = |count: usize| -> Vec<T> {
        let out = body[off..off + 8 * count]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        off += 8 * count;
        out
    };
    let widths = take(counts[0]);
    let centers = take(counts[1]);
    let mut weights = take(counts[2]);
    let block = dims.block_rows() * dims.q;
    let target_block = weights.split_off(dims.m * block);
    let target = (0..dims.m)
        .find(|&f| weights[f * block..(f + 1) * block] == target_block[..])
        .ok_or(ModelFileError::UnresolvedTargetAlias)?;
    Ok(RbfNetwork::new(dims, centers, widths, weights, target)?)
}

pub fn write<T: Real>(net: &RbfNetwork<T>, mut w: impl Write) -> Result<(), ModelFileError> {
    w.write_all(&to_bytes(net))?;
    Ok(())
}

pub fn read<T: Real>(mut r: impl Read) -> Result<RbfNetwork<T>, ModelFileError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn save<T: Real>(net: &RbfNetwork<T>, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<RbfNetwork<T>, ModelFileError> {
    from_bytes(&std::fs::read(path)?)
}

/// Loads a model and checks its l, n and m (q is free).
pub fn load_expecting<T: Real>(path: impl AsRef<Path>, expected: Dims) -> Result<RbfNetwork<T>, ModelFileError> {
    let net = load::<T>(path)?;
    let found = net.dims();
    if (found.l, found.n, found.m) != (expected.l, expected.n, expected.m) {
        return Err(ModelFileError::DimensionMismatch { expected, found });
    }
    Ok(net)
}
