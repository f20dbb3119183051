use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 · edit_distance / len(reference)` over characters.
pub fn cer(hypothesis: &str, reference: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(Error::Invalid("empty reference".into()));
    }
    let h: Vec<char> = hypothesis.chars().collect();
    Ok(100.0 * edit_distance(&h, &r) as f64 / r.len() as f64)
}

/// Fraction of hypothesis characters outside `charset`; 0 when nothing was emitted.
pub fn out_of_charset_rate<'a>(hyps: impl IntoIterator<Item = &'a str>, charset: &[char]) -> f64 {
    let (mut out, mut total) = (0usize, 0usize);
    for h in hyps {
        for c in h.chars() {
            total += 1;
            out += usize::from(!charset.contains(&c));
        }
    }
    if total == 0 {
        0.0
    } else {
        out as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub errors: usize,
    pub ref_len: usize,
}

impl UtteranceScore {
    pub fn cer(&self) -> f64 {
        100.0 * self.errors as f64 / self.ref_len as f64
    }
}

/// Per-utterance edit counts and the pooled corpus %CER.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusScore {
    pub utterances: Vec<UtteranceScore>,
}

impl CorpusScore {
    /// Scores `(id, hypothesis)` pairs against `(id, reference)` pairs. Every
    /// reference needs a hypothesis; a missing one is an error.
    pub fn compute(hyps: &[(String, String)], refs: &[(String, String)]) -> Result<Self> {
        let mut utterances = Vec::with_capacity(refs.len());
        for (id, reference) in refs {
            let hyp = hyps
                .iter()
                .find(|(h, _)| h == id)
                .map(|(_, t)| t.as_str())
                .ok_or_else(|| Error::Invalid(format!("no hypothesis for {id}")))?;
            let r: Vec<char> = reference.chars().collect();
            if r.is_empty() {
                return Err(Error::Invalid(format!("{id}: empty reference")));
            }
            let h: Vec<char> = hyp.chars().collect();
            utterances.push(UtteranceScore {
                id: id.clone(),
                errors: edit_distance(&h, &r),
                ref_len: r.len(),
            });
        }
        Ok(CorpusScore { utterances })
    }

    pub fn cer(&self) -> f64 {
        let errors: usize = self.utterances.iter().map(|u| u.errors).sum();
        let len: usize = self.utterances.iter().map(|u| u.ref_len).sum();
        if len == 0 {
            0.0
        } else {
            100.0 * errors as f64 / len as f64
        }
    }

    /// `utt_id,errors,ref_len,cer` rows, closed by a `corpus` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("utt_id,errors,ref_len,cer\n");
        for u in &self.utterances {
            writeln!(s, "{},{},{},{:.4}", u.id, u.errors, u.ref_len, u.cer()).unwrap();
        }
        let errors: usize = self.utterances.iter().map(|u| u.errors).sum();
        let len: usize = self.utterances.iter().map(|u| u.ref_len).sum();
        writeln!(s, "corpus,{errors},{len},{:.4}", self.cer()).unwrap();
        s
    }
}

/// `utt-id<TAB>hypothesis` per line.
pub fn write_hyps(path: &Path, hyps: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (id, h) in hyps {
        writeln!(s, "{id}\t{h}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_hyps(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            l.split_once('\t')
                .map(|(id, h)| (id.to_string(), h.to_string()))
                .ok_or_else(|| {
                    Error::format("hypothesis file", format!("line {}: missing tab", n + 1))
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc").unwrap(), 0.0);
        assert!((cer("axc", "abc").unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("", "ab").unwrap(), 100.0);
        assert_eq!(cer("abcd", "a").unwrap(), 300.0);
        assert!(cer("a", "").is_err());
    }

    #[test]
    fn corpus_cer_is_pooled() {
        let hyps = vec![
            ("a".to_string(), "xy".to_string()),
            ("b".into(), "z".into()),
        ];
        let refs = vec![
            ("a".to_string(), "xy".to_string()),
            ("b".into(), "qqq".into()),
        ];
        let s = CorpusScore::compute(&hyps, &refs).unwrap();
        assert_eq!(s.cer(), 60.0);
        assert!(s.to_csv().ends_with("corpus,3,5,60.0000\n"));
        assert!(CorpusScore::compute(&hyps[..1], &refs).is_err());
    }

    #[test]
    fn charset_rate() {
        assert_eq!(out_of_charset_rate(["ab", "cz"], &['a', 'b', 'c']), 0.25);
        assert_eq!(out_of_charset_rate(Vec::<&str>::new(), &['a']), 0.0);
    }

    #[test]
    fn hyp_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.txt");
        let hyps = vec![
            ("u1".to_string(), "ab c".to_string()),
            ("u2".into(), String::new()),
        ];
        write_hyps(&p, &hyps).unwrap();
        assert_eq!(read_hyps(&p).unwrap(), hyps);
    }
}
