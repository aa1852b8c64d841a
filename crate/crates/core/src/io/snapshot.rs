//! Binary snapshot files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 0..4  | magic `QGFS` |
//! | 4..8  | format version (u32) |
//! | 8..12 | shape tag (u32, 0 rectangle, 1 disk) |
//! | 12..20 | nx, ny (u32) |
//! | 20..44 | extents (f64 x 3): `lx, ly, 0` or `cx, cy, radius` |
//! | 44..68 | t, l, beta (f64) |
//! | 68.. | q, psi, u1, u2, each `nx * ny` f64 in row-major order |

use std::path::Path;
use std::sync::Arc;

use crate::diagnostics::Frame;
use crate::error::{Error, Result};
use crate::geometry::{Domain, DomainSpec, ScalarField, Shape, Vec2};
use crate::scheme::Snapshot;

pub const MAGIC: &[u8; 4] = b"QGFS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 68;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub spec: DomainSpec,
    pub t: f64,
    pub l: f64,
    pub beta: f64,
    pub q: Vec<f64>,
    pub psi: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl SnapshotFile {
    pub fn from_snapshot(s: &Snapshot, beta: f64) -> Self {
        Self {
            spec: *s.q.domain().spec(),
            t: s.t,
            l: s.stream.l,
            beta,
            q: s.q.values().to_vec(),
            psi: s.stream.psi.values().to_vec(),
            u1: s.u.u1.values().to_vec(),
            u2: s.u.u2.values().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.spec.nx * self.spec.ny;
        let mut out = Vec::with_capacity(HEADER_LEN + 32 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let (tag, extents) = match self.spec.shape {
            Shape::Rectangle { lx, ly } => (0u32, [lx, ly, 0.0]),
            Shape::Disk { center, radius } => (1u32, [center.x, center.y, radius]),
        };
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&(self.spec.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.ny as u32).to_le_bytes());
        for v in extents.into_iter().chain([self.t, self.l, self.beta]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for field in [&self.q, &self.psi, &self.u1, &self.u2] {
            for v in field.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Snapshot {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let (nx, ny) = (u32_at(12) as usize, u32_at(16) as usize);
        let e = [f64_at(20), f64_at(28), f64_at(36)];
        let shape = match u32_at(8) {
            0 => Shape::Rectangle { lx: e[0], ly: e[1] },
            1 => Shape::Disk {
                center: Vec2::new(e[0], e[1]),
                radius: e[2],
            },
            tag => return Err(bad(format!("unknown shape tag {tag}"))),
        };
        let n = nx
            .checked_mul(ny)
            .ok_or_else(|| bad("grid size overflows".into()))?;
        let expected = HEADER_LEN + 32 * n;
        if bytes.len() != expected {
            return Err(bad(format!(
                "payload holds {} bytes, expected {} for a {nx} x {ny} grid",
                bytes.len() - HEADER_LEN,
                expected - HEADER_LEN
            )));
        }
        let field = |i: usize| -> Vec<f64> {
            let start = HEADER_LEN + 8 * n * i;
            bytes[start..start + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        Ok(Self {
            spec: DomainSpec { shape, nx, ny },
            t: f64_at(44),
            l: f64_at(52),
            beta: f64_at(60),
            q: field(0),
            psi: field(1),
            u1: field(2),
            u2: field(3),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }

    /// Rebuilds the domain and returns the fields needed by the diagnostics.
    pub fn to_frame(&self, domain: Option<&Arc<Domain>>) -> Result<Frame> {
        let domain = match domain {
            Some(d) if *d.spec() == self.spec => d.clone(),
            Some(_) => return Err(Error::DomainMismatch),
            None => Domain::build(self.spec)?,
        };
        Ok(Frame {
            t: self.t,
            l: self.l,
            q: ScalarField::new(&domain, self.q.clone())?.with_time(self.t),
            psi: ScalarField::new(&domain, self.psi.clone())?.with_time(self.t),
        })
    }
}

/// File name of the `index`-th snapshot of a run.
pub fn snapshot_name(index: usize) -> String {
    format!("snap_{index:05}.qgfs")
}

/// Snapshot files in `dir`, sorted by name.
pub fn list_snapshots(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "qgfs"))
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SnapshotFile {
        let spec = DomainSpec::disk(Vec2::new(0.5, -0.25), 1.5, 9, 11);
        let n = 99;
        let vals = |s: f64| {
            (0..n)
                .map(|k| s * (k as f64).sin() / 3.0)
                .collect::<Vec<_>>()
        };
        SnapshotFile {
            spec,
            t: 0.1 + 0.2,
            l: -1.0 / 7.0,
            beta: 1.0,
            q: vals(1.0),
            psi: vals(-2.0),
            u1: vals(1e-300),
            u2: vec![f64::MIN_POSITIVE; n],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 99 * 8);
        let back = SnapshotFile::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, s);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        let p = Path::new("x");
        assert!(SnapshotFile::from_bytes(&bytes[..40], p).is_err());
        assert!(SnapshotFile::from_bytes(&bytes[..bytes.len() - 8], p).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(SnapshotFile::from_bytes(&b, p).is_err());
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(SnapshotFile::from_bytes(&b, p).is_err());
        let mut b = bytes;
        b[8] = 7;
        let err = SnapshotFile::from_bytes(&b, p).unwrap_err().to_string();
        assert!(err.contains("shape tag"), "{err}");
    }

    #[test]
    fn frame_rebuilds_the_domain() {
        let s = sample();
        let f = s.to_frame(None).unwrap();
        assert_eq!(f.psi.values(), &s.psi[..]);
        assert_eq!(*f.q.domain().spec(), s.spec);
        let other = Domain::build(DomainSpec::rectangle(1.0, 1.0, 9, 11)).unwrap();
        assert!(s.to_frame(Some(&other)).is_err());
    }
}
