//! Artifact file formats: SBF1 binary tensors, PGM field renders and
//! masks, CSV tables, and key = value manifests.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// SBF1: magic `SBF1`, u32 ndim, u32 dims[ndim], float64 little-endian
/// row-major payload.
pub mod sbf1 {
    use super::*;

    pub struct Tensor {
        pub dims: Vec<usize>,
        pub data: Vec<f64>,
    }

    impl Tensor {
        pub fn vector(data: Vec<f64>) -> Self {
            Tensor {
                dims: vec![data.len()],
                data,
            }
        }

        pub fn matrix(rows: usize, cols: usize, row_major: Vec<f64>) -> Self {
            assert_eq!(rows * cols, row_major.len());
            Tensor {
                dims: vec![rows, cols],
                data: row_major,
            }
        }
    }

    pub fn write(path: &Path, t: &Tensor) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 4 * t.dims.len() + 8 * t.data.len());
        buf.extend_from_slice(b"SBF1");
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Tensor> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[0..4] != b"SBF1" {
            return Err(Error::Format(format!("{}: not an SBF1 file", path.display())));
        }
        let ndim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut off = 8;
        if bytes.len() < off + 4 * ndim {
            return Err(Error::Format("SBF1 header truncated".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize);
            off += 4;
        }
        let count: usize = dims.iter().product();
        if bytes.len() != off + 8 * count {
            return Err(Error::Format(format!(
                "SBF1 payload size mismatch: expected {} doubles",
                count
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let s = off + 8 * i;
            data.push(f64::from_le_bytes(bytes[s..s + 8].try_into().unwrap()));
        }
        Ok(Tensor { dims, data })
    }
}

/// Binary (P5) PGM images: masks in, min-max scaled field renders out.
pub mod pgm {
    use super::*;

    pub struct Image {
        pub width: usize,
        pub height: usize,
        pub pixels: Vec<u8>,
    }

    pub fn read_pgm(path: &Path) -> Result<Image> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut token = |bytes: &[u8]| -> Result<String> {
            // skip whitespace and `#` comments
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token(&bytes)?;
        if magic != "P5" {
            return Err(Error::Format(format!("expected P5 PGM, got {magic}")));
        }
        let width: usize = token(&bytes)?
            .parse()
            .map_err(|_| Error::Format("bad PGM width".into()))?;
        let height: usize = token(&bytes)?
            .parse()
            .map_err(|_| Error::Format("bad PGM height".into()))?;
        let maxval: usize = token(&bytes)?
            .parse()
            .map_err(|_| Error::Format("bad PGM maxval".into()))?;
        if maxval > 255 {
            return Err(Error::Format("only 8-bit PGM supported".into()));
        }
        pos += 1; // single whitespace after maxval
        if bytes.len() < pos + width * height {
            return Err(Error::Format("PGM pixel data truncated".into()));
        }
        Ok(Image {
            width,
            height,
            pixels: bytes[pos..pos + width * height].to_vec(),
        })
    }

    pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
        f.write_all(&img.pixels)?;
        Ok(())
    }

    /// Renders a nodal field (row-major, `ny` rows of `nx`) min-max
    /// scaled to 8-bit grayscale.
    pub fn render_field(path: &Path, field: &[f64], nx: usize, ny: usize) -> Result<()> {
        assert_eq!(field.len(), nx * ny);
        let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let pixels = field
            .iter()
            .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
            .collect();
        write_pgm(
            path,
            &Image {
                width: nx,
                height: ny,
                pixels,
            },
        )
    }
}

/// CSV with a header row, comma separators, `.` decimals, LF endings.
pub mod csv {
    use super::*;

    pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// key = value manifest files; one entry per line, `#` comments.
pub mod manifest {
    use super::*;

    pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
        let text = std::fs::read_to_string(path)?;
        parse(&text)
    }

    pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(entries)
    }
}

/// FNV-1a content hash used in artifact manifests.
pub fn content_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbf1_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sbf");
        let t = sbf1::Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, 6.25]);
        sbf1::write(&path, &t).unwrap();
        let back = sbf1::read(&path).unwrap();
        assert_eq!(back.dims, vec![2, 3]);
        assert_eq!(back.data, t.data);
    }

    #[test]
    fn pgm_roundtrip_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, b"P5\n# mask\n2 2\n255\n\x00\xff\xff\x00").unwrap();
        let img = pgm::read_pgm(&path).unwrap();
        assert_eq!(img.pixels, vec![0, 255, 255, 0]);
        pgm::write_pgm(&path, &img).unwrap();
        let again = pgm::read_pgm(&path).unwrap();
        assert_eq!(again.pixels, img.pixels);
    }

    #[test]
    fn manifest_parse_rejects_garbage() {
        assert!(manifest::parse("a = 1\n# c\nb = two\n").is_ok());
        assert!(manifest::parse("nonsense line\n").is_err());
    }
}
