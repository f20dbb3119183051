use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Id shared by the attention decoder's start/end symbol and the CTC blank.
pub const SPECIAL: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabEntry {
    pub symbol: char,
    /// Languages whose character set contains the symbol.
    pub languages: BTreeSet<String>,
}

/// Character inventory. Characters take ids `1..=V`; id `0` is reserved
/// ([`SPECIAL`]), so both output heads are `V + 1` wide.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_entries(entries: Vec<VocabEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.symbol, i + 1).is_some() {
                return Err(Error::Invalid(format!("duplicate symbol {:?}", e.symbol)));
            }
        }
        Ok(Vocabulary { entries, index })
    }

    /// Concatenates per-language character sets in the given order, merging
    /// shared characters into a single entry tagged with every language.
    pub fn from_charsets<'a, I>(charsets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a [char])>,
    {
        let mut entries: Vec<VocabEntry> = Vec::new();
        let mut seen: HashMap<char, usize> = HashMap::new();
        for (lang, chars) in charsets {
            for &ch in chars {
                match seen.get(&ch) {
                    Some(&i) => {
                        entries[i].languages.insert(lang.to_string());
                    }
                    None => {
                        seen.insert(ch, entries.len());
                        entries.push(VocabEntry {
                            symbol: ch,
                            languages: BTreeSet::from([lang.to_string()]),
                        });
                    }
                }
            }
        }
        Self::from_entries(entries)
    }

    /// Number of characters `V`, excluding the reserved id.
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Output width of both heads, `V + 1`.
    pub fn width(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn id(&self, ch: char) -> Option<usize> {
        self.index.get(&ch).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        id.checked_sub(1)
            .and_then(|i| self.entries.get(i))
            .map(|e| e.symbol)
    }

    pub fn encode(&self, text: &str, utterance: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|ch| {
                self.id(ch).ok_or_else(|| Error::UnknownCharacter {
                    ch: ch.to_string(),
                    utterance: utterance.to_string(),
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                self.symbol(id).ok_or(Error::LabelOutOfRange {
                    label: id,
                    size: self.width(),
                })
            })
            .collect()
    }

    pub fn languages(&self) -> BTreeSet<String> {
        self.entries
            .iter()
            .flat_map(|e| e.languages.iter().cloned())
            .collect()
    }

    /// Ids of the characters tagged with `language`.
    pub fn charset(&self, language: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.languages.contains(language))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn charsets(&self) -> BTreeMap<String, Vec<char>> {
        let mut out: BTreeMap<String, Vec<char>> = BTreeMap::new();
        for e in &self.entries {
            for l in &e.languages {
                out.entry(l.clone()).or_default().push(e.symbol);
            }
        }
        out
    }

    /// Characters of `chars` missing from this vocabulary.
    pub fn missing(&self, chars: &[char]) -> Vec<char> {
        chars
            .iter()
            .copied()
            .filter(|c| self.id(*c).is_none())
            .collect()
    }
}
