//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "T3DN"
//! version u32      1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u16, name UTF-8, rank u8, dims u32 × rank, payload f32 × numel
//! digest  32 bytes  SHA-256 of the model configuration text
//! epoch   u32       epoch the snapshot was taken at
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"T3DN";
pub const VERSION: u32 = 1;

/// A named-tensor snapshot plus the provenance needed to reload it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    /// SHA-256 of the model configuration this state belongs to.
    pub config_digest: [u8; 32],
    pub epoch: u32,
}

/// Digest of a model configuration rendering, recorded in checkpoints and
/// run manifests.
pub fn config_digest(config_text: &str) -> [u8; 32] {
    Sha256::digest(config_text.as_bytes()).into()
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(ckpt.tensors.len())
        .map_err(|_| Error::Contract("too many tensors for checkpoint".to_string()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, shape, data) in &ckpt.tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| {
            Error::Contract(format!("tensor name '{name}' exceeds 65535 bytes"))
        })?;
        let rank = u8::try_from(shape.len())
            .map_err(|_| Error::Contract(format!("tensor '{name}' rank exceeds 255")))?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Contract(format!(
                "tensor '{name}': shape {shape:?} does not cover {} values",
                data.len()
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| {
                Error::Contract(format!("tensor '{name}': dimension {d} exceeds u32"))
            })?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ckpt.config_digest);
    out.extend_from_slice(&ckpt.epoch.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.offset as u64,
                message: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, offset: 0 };
    let magic_at = c.offset as u64;
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: magic_at,
            message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version_at = c.offset as u64;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: version_at,
            message: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = c.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for ti in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name_at = c.offset as u64;
        let name_bytes = c.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format {
                offset: name_at,
                message: format!("tensor {ti}: name is not valid UTF-8"),
            })?
            .to_string();
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload_at = c.offset as u64;
        let payload = c.take(numel * 4, "tensor payload")?;
        let mut data = Vec::with_capacity(numel);
        for (vi, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: payload_at + vi as u64 * 4,
                    message: format!("tensor '{name}': non-finite value {v}"),
                });
            }
            data.push(v);
        }
        tensors.push((name, shape, data));
    }
    let digest: [u8; 32] = c.take(32, "config digest")?.try_into().unwrap();
    let epoch = c.u32("epoch")?;
    if c.offset != bytes.len() {
        return Err(Error::Format {
            offset: c.offset as u64,
            message: format!("{} trailing bytes after checkpoint", bytes.len() - c.offset),
        });
    }
    Ok(Checkpoint { tensors, config_digest: digest, epoch })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            tensors: vec![
                ("a.w0".to_string(), vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 4.0, -0.125]),
                ("a.b".to_string(), vec![3], vec![0.5, 1.5, -1.5]),
                ("scalarish".to_string(), vec![], vec![7.0]),
            ],
            config_digest: config_digest("model-config-text"),
            epoch: 12,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ckpt = sample();
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let bytes2 = encode_checkpoint(&back).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.t3dn");
        let ckpt = sample();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn corruption_reports_offsets() {
        let good = encode_checkpoint(&sample()).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        match decode_checkpoint(&bad) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }

        let mut bad = good.clone();
        bad[4] = 9;
        match decode_checkpoint(&bad) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }

        // Truncation anywhere fails with the truncation offset.
        for cut in [3, 11, 14, 20, good.len() - 1] {
            match decode_checkpoint(&good[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut at {cut}: expected format error, got {other:?}"),
            }
        }

        let mut extended = good.clone();
        extended.push(0);
        match decode_checkpoint(&extended) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, good.len() as u64),
            other => panic!("expected trailing-bytes error, got {other:?}"),
        }

        // NaN payload is rejected with the value's own offset.
        let mut nan = good.clone();
        // First tensor payload starts after 4+4+4 header, 2+4 name, 1 rank,
        // 8 dims.
        let payload_at = 4 + 4 + 4 + 2 + 4 + 1 + 8;
        nan[payload_at..payload_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_checkpoint(&nan) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, payload_at as u64),
            other => panic!("expected NaN rejection, got {other:?}"),
        }
    }

    #[test]
    fn digest_distinguishes_configs() {
        assert_ne!(config_digest("a"), config_digest("b"));
        assert_eq!(config_digest("same"), config_digest("same"));
    }
}
