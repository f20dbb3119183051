//! Utterance manifests and phone-target files.
//!
//! Manifest line: `utt-id<TAB>archive<TAB>language<TAB>transcript[<TAB>phones]`,
//! where `archive` is a feature archive holding a record named `utt-id` and
//! `phones` a phone-target file (`utt-id<TAB>space-separated labels` per
//! line). Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::corpus::{side_of, Corpus, GeneratedUtterance};
use crate::error::{Error, Result};
use crate::features::{archive, FeatureSequence};
use crate::training::Utterance;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub archive: String,
    pub language: String,
    pub transcript: String,
    pub phones: Option<String>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(Error::format(
                "manifest",
                format!(
                    "line {}: expected 4 or 5 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                ),
            ));
        }
        out.push(ManifestEntry {
            utt_id: fields[0].to_string(),
            archive: fields[1].to_string(),
            language: fields[2].to_string(),
            transcript: fields[3].to_string(),
            phones: fields.get(4).map(|s| s.to_string()),
        });
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        let fields = [&e.utt_id, &e.archive, &e.language, &e.transcript];
        if fields.iter().any(|f| f.contains(['\t', '\n'])) {
            return Err(Error::Invalid(format!(
                "{}: field contains a tab or newline",
                e.utt_id
            )));
        }
        write!(
            s,
            "{}\t{}\t{}\t{}",
            e.utt_id, e.archive, e.language, e.transcript
        )
        .unwrap();
        if let Some(p) = &e.phones {
            write!(s, "\t{p}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    std::fs::write(path, format_manifest(entries)?).map_err(|e| Error::io(path, e))
}

pub fn write_phone_targets(path: &Path, targets: &[(String, Vec<usize>)]) -> Result<()> {
    let mut s = String::new();
    for (id, labels) in targets {
        let labels: Vec<String> = labels.iter().map(usize::to_string).collect();
        writeln!(s, "{id}\t{}", labels.join(" ")).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_phone_targets(path: &Path) -> Result<BTreeMap<String, Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let (id, labels) = line.split_once('\t').ok_or_else(|| {
            Error::format("phone targets", format!("line {}: missing tab", n + 1))
        })?;
        let labels = labels
            .split_whitespace()
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::format("phone targets", format!("line {}: bad label {v:?}", n + 1))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        out.insert(id.to_string(), labels);
    }
    Ok(out)
}

fn resolve(base: &Path, reference: &str) -> PathBuf {
    let p = Path::new(reference);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A manifest entry with its features (and phone labels when referenced).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub features: FeatureSequence,
    pub phones: Option<Vec<usize>>,
}

impl LoadedEntry {
    pub fn utterance(&self) -> Utterance {
        Utterance {
            language: self.entry.language.clone(),
            features: self.features.clone(),
            transcript: self.entry.transcript.clone(),
        }
    }
}

/// Reads a manifest and every archive and phone file it references, each file once.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedEntry>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(path)?;
    let mut archives: BTreeMap<String, BTreeMap<String, FeatureSequence>> = BTreeMap::new();
    let mut phone_files: BTreeMap<String, BTreeMap<String, Vec<usize>>> = BTreeMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if !archives.contains_key(&e.archive) {
            let seqs = archive::read(&resolve(base, &e.archive))?;
            archives.insert(
                e.archive.clone(),
                seqs.into_iter().map(|s| (s.id.clone(), s)).collect(),
            );
        }
        let features = archives[&e.archive]
            .get(&e.utt_id)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("{}: no record for {}", e.archive, e.utt_id)))?;
        let phones = match &e.phones {
            None => None,
            Some(p) => {
                if !phone_files.contains_key(p) {
                    phone_files.insert(p.clone(), read_phone_targets(&resolve(base, p))?);
                }
                Some(phone_files[p].get(&e.utt_id).cloned().ok_or_else(|| {
                    Error::Invalid(format!("{p}: no phone targets for {}", e.utt_id))
                })?)
            }
        };
        out.push(LoadedEntry {
            entry: e,
            features,
            phones,
        });
    }
    Ok(out)
}

/// Writes `<lang>.<split>.farc`, `<lang>.<split>.phones`, and the manifests
/// `train.tsv` and `eval.tsv` covering all languages.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, data) in [("train", &corpus.train), ("eval", &corpus.eval)] {
        let mut entries = Vec::new();
        for (lang, utts) in data {
            let farc = format!("{lang}.{split}.farc");
            let phones = format!("{lang}.{split}.phones");
            let seqs: Vec<FeatureSequence> = utts.iter().map(|u| u.features.clone()).collect();
            archive::write(&dir.join(&farc), &seqs)?;
            let targets: Vec<(String, Vec<usize>)> = utts
                .iter()
                .map(|u| (u.id.clone(), u.phones.clone()))
                .collect();
            write_phone_targets(&dir.join(&phones), &targets)?;
            entries.extend(utts.iter().map(|u| ManifestEntry {
                utt_id: u.id.clone(),
                archive: farc.clone(),
                language: lang.clone(),
                transcript: u.transcript.clone(),
                phones: Some(phones.clone()),
            }));
        }
        write_manifest(&dir.join(format!("{split}.tsv")), &entries)?;
    }
    Ok(())
}

/// Inverse of [`write_corpus`]. Utterances without phone targets get none.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for split in ["train", "eval"] {
        let path = dir.join(format!("{split}.tsv"));
        if !path.exists() {
            return Err(Error::MissingStage {
                stage: "gen-corpus".into(),
                detail: format!("{} not found", path.display()),
            });
        }
        for l in load_manifest(&path)? {
            let u = GeneratedUtterance {
                side: side_of(&l.entry.utt_id).to_string(),
                id: l.entry.utt_id,
                language: l.entry.language.clone(),
                transcript: l.entry.transcript,
                features: l.features,
                phones: l.phones.unwrap_or_default(),
            };
            let target = if split == "train" {
                &mut corpus.train
            } else {
                &mut corpus.eval
            };
            target.entry(l.entry.language).or_default().push(u);
        }
    }
    Ok(corpus)
}
