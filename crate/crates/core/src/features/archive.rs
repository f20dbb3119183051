//! Feature archive layout (little endian):
//!
//! ```text
//! "FARC" | version u32 | records until EOF:
//!   u32 len + UTF-8 id | rows u32 | cols u32 | rows × cols f32, row major
//! ```
//!
//! Values are stored as `f32`; sequences whose values are already
//! representable in `f32` round-trip exactly.

use std::path::Path;

use super::FeatureSequence;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::checkpoint::{Reader, Writer};

const MAGIC: &[u8; 4] = b"FARC";
pub const VERSION: u32 = 1;

/// Rounds every value to the nearest `f32`, the precision the archive keeps.
pub fn quantize(seq: &FeatureSequence) -> FeatureSequence {
    let data = seq.frames.data().iter().map(|&v| v as f32 as f64).collect();
    FeatureSequence {
        id: seq.id.clone(),
        frames: Tensor::new(seq.frames.shape().to_vec(), data).expect("shape preserved"),
    }
}

pub fn to_bytes(seqs: &[FeatureSequence]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION as usize);
    for s in seqs {
        w.str(&s.id);
        w.u32(s.len());
        w.u32(s.dim());
        for &v in s.frames.data() {
            w.bytes(&(v as f32).to_le_bytes());
        }
    }
    w.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<FeatureSequence>> {
    let mut r = Reader::new(bytes, "feature archive");
    if r.take(4)? != MAGIC {
        return Err(Error::format("feature archive", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(
            "feature archive",
            format!("unsupported version {version}"),
        ));
    }
    let mut out = Vec::new();
    while !r.at_end() {
        let id = r.str()?.to_string();
        let rows = r.u32()?;
        let cols = r.u32()?;
        let data = r
            .take(rows * cols * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let frames = Tensor::matrix(rows, cols, data)
            .map_err(|e| Error::format("feature archive", format!("{id}: {e}")))?;
        out.push(FeatureSequence::new(id, frames)?);
    }
    Ok(out)
}

pub fn write(path: &Path, seqs: &[FeatureSequence]) -> Result<()> {
    std::fs::write(path, to_bytes(seqs)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<FeatureSequence>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Looks up one sequence by id in an archive file.
pub fn read_one(path: &Path, id: &str) -> Result<FeatureSequence> {
    read(path)?
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::Invalid(format!("{}: no record {id:?}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, rows: usize, cols: usize) -> FeatureSequence {
        let data = (0..rows * cols).map(|i| i as f64 * 0.25 - 3.0).collect();
        FeatureSequence::new(id, Tensor::matrix(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn header_and_record_layout() {
        let bytes = to_bytes(&[seq("ab", 1, 2)]);
        assert_eq!(&bytes[..4], b"FARC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], b"ab");
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..22], &2u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &(-3.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn round_trip_and_empty_archive() {
        let seqs = vec![seq("x", 3, 4), seq("ünï", 1, 1)];
        assert_eq!(from_bytes(&to_bytes(&seqs)).unwrap(), seqs);
        assert!(from_bytes(&to_bytes(&[])).unwrap().is_empty());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&[seq("x", 2, 2)]);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'G';
        assert!(from_bytes(&bad).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(from_bytes(&ver).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let s = FeatureSequence::new(
            "q",
            Tensor::vector(vec![0.1, 1.0 / 3.0])
                .reshaped(&[1, 2])
                .unwrap(),
        )
        .unwrap();
        let q = quantize(&s);
        assert_eq!(quantize(&q), q);
        assert_eq!(from_bytes(&to_bytes(&[q.clone()])).unwrap()[0], q);
    }
}
