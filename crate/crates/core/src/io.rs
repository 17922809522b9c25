//! File helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

const FEATURE_MAGIC: &[u8; 4] = b"T2DF";

/// Feature matrix as `T2DF`, `u32` rows, `u32` cols, then little-endian
/// `f32` values row by row.
pub fn encode_features(frames: &Tensor<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + frames.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for &v in frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor<f64>> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::invalid("not a feature file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(Error::invalid(format!("feature file holds {} bytes for {rows}x{cols}", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    Tensor::matrix(rows, cols, data)
}

pub fn write_features(path: &Path, frames: &Tensor<f64>) -> Result<()> {
    write_atomic(path, &encode_features(frames))
}

pub fn read_features(path: &Path) -> Result<Tensor<f64>> {
    decode_features(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_roundtrip_at_f32_precision() {
        let t = Tensor::matrix(2, 3, vec![0.5, -1.25, 3.0, 1e-3, 0.0, 7.75]).unwrap();
        let back = decode_features(&encode_features(&t)).unwrap();
        assert_eq!(back.shape(), &[2, 3]);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let mut bad = encode_features(&t);
        bad.pop();
        assert!(decode_features(&bad).is_err());
        assert!(decode_features(b"nope").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
