//! CAFT tensor files.
//!
//! ```text
//! "CAFT" | version u8 = 1 | layout u8 | arch u8 | ndims u8 | dims u32 LE x ndims | f32 LE payload
//! ```

use std::path::Path;

use caufc_core::{ArchTag, FeatureTensor, Layout};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"CAFT";
pub const VERSION: u8 = 1;

pub fn header_len(ndims: usize) -> usize {
    8 + 4 * ndims
}

pub fn to_bytes(t: &FeatureTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(t.dims().len()) + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, t.layout().code(), t.arch().code(), t.dims().len() as u8]);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses CAFT bytes; `path` only labels errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<FeatureTensor> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(truncated(format!("{} bytes is shorter than the fixed header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad_magic(bytes, path));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(path, format!("unsupported version {}", bytes[4])));
    }
    let layout = Layout::from_code(bytes[5]).ok_or_else(|| Error::format(path, format!("unknown layout code {}", bytes[5])))?;
    let arch = ArchTag::from_code(bytes[6]).ok_or_else(|| Error::format(path, format!("unknown arch code {}", bytes[6])))?;
    let ndims = bytes[7] as usize;
    if ndims != layout.ndims() {
        return Err(Error::format(path, format!("layout {:?} with {} dims", layout, ndims)));
    }
    let head = header_len(ndims);
    if bytes.len() < head {
        return Err(truncated(format!("header needs {} bytes, file has {}", head, bytes.len())));
    }
    let dims: Vec<usize> = bytes[8..head]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let need = count.and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::format(path, format!("dims {:?} overflow", dims)))?;
    let payload = &bytes[head..];
    if payload.len() < need {
        return Err(truncated(format!("dims {:?} need {} payload bytes, found {}", dims, need, payload.len())));
    }
    if payload.len() > need {
        return Err(Error::format(
            path,
            format!("dims {:?} need {} payload bytes, found {} (trailing data)", dims, need, payload.len()),
        ));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    FeatureTensor::new(layout, dims, data, arch).map_err(|e| Error::format(path, e.to_string()))
}

fn bad_magic(bytes: &[u8], path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: "CAFT",
        found: bytes[..4].try_into().unwrap(),
    }
}

pub fn write_caft(t: &FeatureTensor, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &to_bytes(t))
}

/// Validates raw values as a tensor and writes it. Nothing is created when
/// validation fails.
pub fn write_caft_values(path: &Path, layout: Layout, dims: Vec<usize>, data: Vec<f32>, arch: ArchTag) -> Result<()> {
    let t = FeatureTensor::new(layout, dims, data, arch)?;
    write_caft(&t, path)
}

pub fn read_caft(path: &Path) -> Result<FeatureTensor> {
    from_bytes(&fsutil::read(path)?, path)
}

/// Reads and checks just the header: `(layout, arch, dims)`.
pub fn read_header(path: &Path) -> Result<(Layout, ArchTag, Vec<usize>)> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 8 + 4 * 3];
    let mut n = 0;
    while n < head.len() {
        match f.read(&mut head[n..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => n += k,
        }
    }
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let head = &head[..n];
    if head.len() < 8 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: "file is shorter than the fixed header".into(),
        });
    }
    if &head[..4] != MAGIC {
        return Err(bad_magic(head, path));
    }
    let ndims = head[7] as usize;
    let hl = header_len(ndims).min(head.len());
    let dims: Vec<usize> = head[8..hl].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let payload = 4 * dims.iter().product::<usize>() as u64;
    if dims.len() != ndims || len != header_len(ndims) as u64 + payload {
        // Defer to the full parser for a precise message.
        return from_bytes(&fsutil::read(path)?, path).map(|t| (t.layout(), t.arch(), t.dims().to_vec()));
    }
    let layout = Layout::from_code(head[5]).ok_or_else(|| Error::format(path, format!("unknown layout code {}", head[5])))?;
    let arch = ArchTag::from_code(head[6]).ok_or_else(|| Error::format(path, format!("unknown arch code {}", head[6])))?;
    if head[4] != VERSION || layout.ndims() != ndims {
        return Err(Error::format(path, "unsupported version or layout/dims mismatch"));
    }
    Ok((layout, arch, dims))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(rows: usize, cols: usize, data: Vec<f32>) -> FeatureTensor {
        FeatureTensor::new(Layout::Tokens2D, vec![rows, cols], data, ArchTag::VitLike).unwrap()
    }

    #[test]
    fn two_by_two_layout() {
        let t = tokens(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = to_bytes(&t);
        assert_eq!(b.len(), header_len(2) + 16);
        assert_eq!(&b[..8], &[b'C', b'A', b'F', b'T', 1, 1, 1, 2]);
        assert_eq!(&b[8..16], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(from_bytes(&b, Path::new("t")).unwrap(), t);
    }

    #[test]
    fn cnn_payload_size() {
        let t = FeatureTensor::new(Layout::ChannelMajor3D, vec![2048, 7, 7], vec![0.5; 2048 * 49], ArchTag::CnnLike).unwrap();
        assert_eq!(to_bytes(&t).len() - header_len(3), 401_408);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_trailing_data() {
        let p = Path::new("x.caft");
        let mut b = to_bytes(&tokens(2, 3, vec![0.0; 6]));
        let good = b.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(from_bytes(&b, p), Err(Error::BadMagic { .. })));
        // dims (2,3) need 24 payload bytes
        let short = &good[..header_len(2) + 20];
        assert!(matches!(from_bytes(short, p), Err(Error::Truncated { .. })));
        assert!(matches!(from_bytes(&good[..6], p), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long, p), Err(Error::Format { .. })));
        let mut wrong = good;
        wrong[7] = 3;
        assert!(matches!(from_bytes(&wrong, p), Err(Error::Format { .. })));
    }

    #[test]
    fn nan_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.caft");
        let r = write_caft_values(&p, Layout::Tokens2D, vec![1, 2], vec![1.0, f32::NAN], ArchTag::Unknown);
        assert!(matches!(r, Err(Error::Core(caufc_core::Error::NonFinite { index: 1 }))));
        assert!(!p.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.caft");
        let t = FeatureTensor::new(Layout::ChannelMajor3D, vec![3, 2, 2], (0..12).map(|i| i as f32 * -0.25).collect(), ArchTag::CnnLike).unwrap();
        write_caft(&t, &p).unwrap();
        assert_eq!(read_caft(&p).unwrap(), t);
        assert_eq!(read_header(&p).unwrap(), (Layout::ChannelMajor3D, ArchTag::CnnLike, vec![3, 2, 2]));
    }
}
