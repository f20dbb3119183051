//! Binary checkpoint layout (little endian):
//!
//! ```text
//! "S2SM" | version u32 | config: u32 len + UTF-8 key=value lines
//! | vocab: u32 count, then per entry u32 len + UTF-8 symbol, u32 len + UTF-8 comma-separated languages
//! | tensors: u32 count, then per tensor u32 len + UTF-8 name, u32 rank, rank × u32 dims, f64 values
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use super::config::ModelConfig;
use super::network::Seq2SeqModel;
use super::vocab::{VocabEntry, Vocabulary};
use crate::autodiff::{ParamStore, Tensor};
use crate::config::KeyValues;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"S2SM";
const VERSION: u32 = 1;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn u32(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u32).to_le_bytes());
    }

    pub(crate) fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], format: &'static str) -> Self {
        Reader {
            buf,
            pos: 0,
            format,
        }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.format,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    pub(crate) fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        let fmt = self.format;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::format(fmt, e.to_string()))
    }
}

pub fn to_bytes(model: &Seq2SeqModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION as usize);
    w.str(&model.config.to_key_values().to_string());
    w.u32(model.vocab.size());
    for e in model.vocab.entries() {
        w.str(&e.symbol.to_string());
        let tags: Vec<&str> = e.languages.iter().map(String::as_str).collect();
        w.str(&tags.join(","));
    }
    w.u32(model.params.len());
    for (name, t) in model.params.iter() {
        w.str(name);
        w.u32(t.shape().len());
        for &d in t.shape() {
            w.u32(d);
        }
        for v in t.data() {
            w.bytes(&v.to_le_bytes());
        }
    }
    w.finish()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Seq2SeqModel> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let config = ModelConfig::from_key_values(&KeyValues::parse(r.str()?)?)?;

    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let sym = r.str()?;
        let mut chars = sym.chars();
        let symbol = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::format(
                    "checkpoint",
                    format!("vocabulary entry {sym:?} is not a single character"),
                ))
            }
        };
        let languages: BTreeSet<String> = r
            .str()?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        entries.push(VocabEntry { symbol, languages });
    }
    let vocab = Vocabulary::from_entries(entries)?;

    let n_tensors = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_tensors {
        let name = r.str()?.to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    if !r.at_end() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    let model = Seq2SeqModel {
        config,
        vocab,
        params,
    };
    model.validate()?;
    Ok(model)
}

pub fn save(model: &Seq2SeqModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Seq2SeqModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Seq2SeqModel {
        let vocab =
            Vocabulary::from_charsets([("x", &['a', 'b'][..]), ("y", &['b', 'ß'][..])]).unwrap();
        let cfg = ModelConfig {
            input_dim: 3,
            encoder_layers: 1,
            encoder_hidden: 2,
            encoder_proj: 2,
            attention_dim: 2,
            attention_channels: 1,
            attention_width: 3,
            decoder_hidden: 2,
            embed_dim: 2,
            ctc_hidden: 2,
            ..Default::default()
        };
        Seq2SeqModel::new(cfg, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut m = small();
        m.params.insert("out.att.b", Tensor::zeros(&[7]));
        assert!(from_bytes(&to_bytes(&m)).is_err());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&small());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
