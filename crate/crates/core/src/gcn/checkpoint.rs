//! Binary checkpoint layout:
//!
//! ```text
//! "GCNF" | version u16 | d u32 | h u32 | c u32 | seed u64 | W1 | b1 | W2 | b2
//! ```
//!
//! All integers and parameters are little-endian; parameters are IEEE-754
//! single precision in row-major order. Bit-flip attacks address this layout.

use std::fs;
use std::path::Path;

use super::Model;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GCNF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 * 3 + 8;

pub fn encode(m: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [m.input_dim, m.hidden_dim, m.num_classes] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&m.seed.to_le_bytes());
    for block in [&m.w1, &m.b1, &m.w2, &m.b2] {
        for x in block.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checkpoint(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (d, h, c) = (read_u32(bytes, 6), read_u32(bytes, 10), read_u32(bytes, 14));
    let seed = u64::from_le_bytes(bytes[18..26].try_into().expect("8-byte slice"));
    let count = d
        .checked_mul(h)
        .and_then(|a| h.checked_mul(c).and_then(|b| a.checked_add(b)))
        .and_then(|x| x.checked_add(h + c))
        .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
    let expected = count
        .checked_mul(4)
        .and_then(|x| x.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")));
    let mut take = |len: usize| floats.by_ref().take(len).collect::<Vec<f32>>();
    let (w1, b1, w2, b2) = (take(d * h), take(h), take(h * c), take(c));
    Ok(Model { input_dim: d, hidden_dim: h, num_classes: c, seed, w1, b1, w2, b2 })
}

/// Byte offset of flat parameter `flat` within an encoded checkpoint.
pub fn param_offset(flat: usize) -> usize {
    HEADER_LEN + 4 * flat
}

pub fn save(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    decode(&fs::read(path)?)
}

/// SHA-256 of the encoded checkpoint.
pub fn model_hash(m: &Model) -> String {
    crate::hash::sha256_hex(&encode(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::Params;

    fn model() -> Model {
        let mut p = Params::zeros(3, 2, 2);
        p.w1 = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        p.b2 = vec![1.0, -1.0];
        Model::from_params(&p, 42)
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model());
        assert_eq!(&bytes[..4], b"GCNF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(read_u32(&bytes, 6), 3);
        assert_eq!(read_u32(&bytes, 10), 2);
        assert_eq!(read_u32(&bytes, 14), 2);
        assert_eq!(u64::from_le_bytes(bytes[18..26].try_into().unwrap()), 42);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 14);
        assert_eq!(&bytes[param_offset(0)..param_offset(1)], &0.1f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_and_rejections() {
        let m = model();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
        let mut bytes = encode(&m);
        bytes.pop();
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&m);
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        assert!(decode(b"GCNF").is_err());
        let mut huge = encode(&m);
        huge[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }
}
