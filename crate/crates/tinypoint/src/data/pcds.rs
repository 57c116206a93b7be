//! Binary point-cloud dataset format.
//!
//! A dataset directory holds `manifest.toml`, `train.pcds` and `test.pcds`.
//! Split file layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "PCDS"
//! version u32      1
//! classes u32
//! points  u32      points per cloud
//! samples u32
//! then per sample: label u32, points * 3 * f32
//! ```
//!
//! Readers validate structure byte-by-byte and report the offset of the
//! first violation, so a corrupted file is distinguishable from an I/O
//! failure.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, PointCloud};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"PCDS";
const VERSION: u32 = 1;

/// Sidecar metadata for a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub points_per_cloud: u32,
    pub train_file: String,
    pub test_file: String,
    /// Generation seed, recorded for provenance when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Serialize one split.
pub fn encode_split(clouds: &[PointCloud], num_classes: usize, points_per_cloud: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + clouds.len() * (4 + points_per_cloud * 12));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(points_per_cloud as u32).to_le_bytes());
    out.extend_from_slice(&(clouds.len() as u32).to_le_bytes());
    for (i, c) in clouds.iter().enumerate() {
        if c.label >= num_classes {
            return Err(Error::Contract(format!(
                "cloud {i} label {} out of range for {num_classes} classes",
                c.label
            )));
        }
        if c.points.len() != points_per_cloud {
            return Err(Error::Contract(format!(
                "cloud {i} has {} points, expected {points_per_cloud}",
                c.points.len()
            )));
        }
        out.extend_from_slice(&(c.label as u32).to_le_bytes());
        for p in &c.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(format_err(
                self.offset as u64,
                format!(
                    "truncated file: needed {n} bytes for {what}, {} remain",
                    self.bytes.len() - self.offset
                ),
            ));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parse one split, validating the header and every record.
pub fn decode_split(bytes: &[u8]) -> Result<(Vec<PointCloud>, u32, u32)> {
    let mut cur = Cursor { bytes, offset: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:?}, expected \"PCDS\"")));
    }
    let version_off = cur.offset as u64;
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(format_err(
            version_off,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let num_classes = cur.u32("class count")?;
    if num_classes == 0 {
        return Err(format_err(8, "class count is zero".to_string()));
    }
    let ppc = cur.u32("points per cloud")?;
    if ppc == 0 {
        return Err(format_err(12, "points per cloud is zero".to_string()));
    }
    let num_samples = cur.u32("sample count")?;

    let mut clouds = Vec::with_capacity(num_samples as usize);
    for s in 0..num_samples {
        let label_off = cur.offset as u64;
        let label = cur.u32("label")?;
        if label >= num_classes {
            return Err(format_err(
                label_off,
                format!("sample {s} label {label} out of range for {num_classes} classes"),
            ));
        }
        let mut points = Vec::with_capacity(ppc as usize);
        for _ in 0..ppc {
            let coord_off = cur.offset as u64;
            let p = [
                cur.f32("coordinate")?,
                cur.f32("coordinate")?,
                cur.f32("coordinate")?,
            ];
            if !p.iter().all(|v| v.is_finite()) {
                return Err(format_err(
                    coord_off,
                    format!("sample {s} contains a non-finite coordinate"),
                ));
            }
            points.push(p);
        }
        clouds.push(PointCloud {
            label: label as usize,
            points,
        });
    }
    if cur.offset != bytes.len() {
        return Err(format_err(
            cur.offset as u64,
            format!("{} trailing bytes after {num_samples} samples", bytes.len() - cur.offset),
        ));
    }
    Ok((clouds, num_classes, ppc))
}

/// Write `manifest.toml`, `train.pcds`, `test.pcds` into `dir` (created if
/// missing).
pub fn write_dataset(ds: &Dataset, dir: &Path, seed: Option<u64>) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        name: ds.name.clone(),
        class_names: ds.class_names.clone(),
        points_per_cloud: ds.points_per_cloud as u32,
        train_file: "train.pcds".to_string(),
        test_file: "test.pcds".to_string(),
        seed,
    };
    let toml_text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    let mpath = dir.join("manifest.toml");
    std::fs::write(&mpath, toml_text).map_err(|e| Error::io(&mpath, e))?;
    for (file, clouds) in [("train.pcds", &ds.train), ("test.pcds", &ds.test)] {
        let path = dir.join(file);
        let bytes = encode_split(clouds, ds.num_classes(), ds.points_per_cloud)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Read a dataset directory written by [`write_dataset`]. Splits must agree
/// with the manifest on class count and point count.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.toml");
    let mtext = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&mtext)
        .map_err(|e| Error::Config(format!("bad manifest {}: {e}", mpath.display())))?;

    let mut splits = Vec::with_capacity(2);
    for file in [&manifest.train_file, &manifest.test_file] {
        let path = dir.join(file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (clouds, nc, ppc) = decode_split(&bytes)?;
        if nc as usize != manifest.class_names.len() {
            return Err(Error::Format {
                offset: 8,
                message: format!(
                    "{}: {} classes disagrees with manifest ({})",
                    path.display(),
                    nc,
                    manifest.class_names.len()
                ),
            });
        }
        if ppc != manifest.points_per_cloud {
            return Err(Error::Format {
                offset: 12,
                message: format!(
                    "{}: {} points per cloud disagrees with manifest ({})",
                    path.display(),
                    ppc,
                    manifest.points_per_cloud
                ),
            });
        }
        splits.push(clouds);
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let ds = Dataset {
        name: manifest.name,
        class_names: manifest.class_names,
        points_per_cloud: manifest.points_per_cloud as usize,
        train,
        test,
    };
    ds.validate()?;
    Ok(ds)
}
