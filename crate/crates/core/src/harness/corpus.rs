//! Synthetic mini-languages: characters are rendered as runs of noisy
//! 37-dim acoustic prototype frames, with a per-side channel offset.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::features::archive::quantize;
use crate::features::{FeatureSequence, RAW_DIM};

/// Smallest Euclidean distance allowed between two prototypes of one language.
pub const MIN_PROTOTYPE_DISTANCE: f64 = 4.0;
/// Utterances sharing one channel offset (one conversation side).
pub const UTTERANCES_PER_SIDE: usize = 10;

/// Shared pool of acoustic prototypes that languages map characters onto.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundBank {
    pub prototypes: Vec<Vec<f64>>,
}

impl SoundBank {
    /// Standard-normal prototypes, redrawn until every pair is at least
    /// [`MIN_PROTOTYPE_DISTANCE`] apart.
    pub fn generate(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(count);
        while prototypes.len() < count {
            let p: Vec<f64> = (0..RAW_DIM).map(|_| rng.sample(StandardNormal)).collect();
            if prototypes
                .iter()
                .all(|q| distance(&p, q) >= MIN_PROTOTYPE_DISTANCE)
            {
                prototypes.push(p);
            }
        }
        SoundBank { prototypes }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLanguageSpec {
    pub id: String,
    pub charset: Vec<char>,
    /// One 37-dim prototype per character.
    pub prototypes: Vec<Vec<f64>>,
    /// Phone-state id of each character.
    pub phones: Vec<usize>,
    /// Inclusive range of frames rendered per character.
    pub frames_per_char: (usize, usize),
    /// Inclusive range of transcript lengths.
    pub transcript_len: (usize, usize),
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Standard deviation of the per-side channel offset.
    pub side_offset: f64,
}

impl SyntheticLanguageSpec {
    /// Characters `chars[i]` sound like `bank.prototypes[sounds[i]]`; the
    /// phone of a character is its position in the charset.
    pub fn from_sounds(
        id: &str,
        chars: &[char],
        sounds: &[usize],
        bank: &SoundBank,
    ) -> Result<Self> {
        if chars.len() != sounds.len() {
            return Err(Error::Invalid(format!(
                "{id}: one sound per character required"
            )));
        }
        let prototypes = sounds
            .iter()
            .map(|&s| {
                bank.prototypes
                    .get(s)
                    .cloned()
                    .ok_or_else(|| Error::Invalid(format!("{id}: no sound {s} in bank")))
            })
            .collect::<Result<_>>()?;
        let spec = SyntheticLanguageSpec {
            id: id.to_string(),
            charset: chars.to_vec(),
            prototypes,
            phones: (0..chars.len()).collect(),
            frames_per_char: (10, 14),
            transcript_len: (3, 12),
            noise: 1.0,
            side_offset: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.charset.is_empty() {
            return Err(Error::Invalid(format!("{}: empty charset", self.id)));
        }
        let n = self.charset.len();
        if self.prototypes.len() != n || self.phones.len() != n {
            return Err(Error::Invalid(format!(
                "{}: need one prototype and one phone per character",
                self.id
            )));
        }
        if self.prototypes.iter().any(|p| p.len() != RAW_DIM) {
            return Err(Error::Dimension(format!(
                "{}: prototypes must be {RAW_DIM}-dim",
                self.id
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if self.charset[i] == self.charset[j] {
                    return Err(Error::Invalid(format!(
                        "{}: duplicate character {:?}",
                        self.id, self.charset[i]
                    )));
                }
                if distance(&self.prototypes[i], &self.prototypes[j]) < MIN_PROTOTYPE_DISTANCE {
                    return Err(Error::Invalid(format!(
                        "{}: prototypes of {:?} and {:?} are too close",
                        self.id, self.charset[i], self.charset[j]
                    )));
                }
            }
        }
        let (lo, hi) = self.frames_per_char;
        let (tl, th) = self.transcript_len;
        if lo == 0 || lo > hi || tl == 0 || tl > th {
            return Err(Error::Invalid(format!("{}: empty length range", self.id)));
        }
        if n == 1 && th > 1 {
            return Err(Error::Invalid(format!(
                "{}: a single character cannot form transcripts without repeats",
                self.id
            )));
        }
        if !(self.noise >= 0.0) || !(self.side_offset >= 0.0) {
            return Err(Error::Invalid(format!("{}: negative noise", self.id)));
        }
        Ok(())
    }

    /// Number of phone states, the size of this language's softmax block.
    pub fn phone_count(&self) -> usize {
        self.phones.iter().max().map_or(0, |m| m + 1)
    }
}

/// One rendered utterance with exact frame-level phone labels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedUtterance {
    pub id: String,
    pub language: String,
    pub side: String,
    pub transcript: String,
    pub features: FeatureSequence,
    pub phones: Vec<usize>,
}

/// Conversation side of an utterance id, `<lang>-<seed>-s<side>`.
pub fn side_of(utt_id: &str) -> &str {
    utt_id.rsplit_once('-').map_or(utt_id, |(side, _)| side)
}

fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Renders `count` utterances of random transcripts. The output depends only
/// on `(spec, seed)`; values are rounded to `f32` so they survive a feature
/// archive unchanged.
pub fn generate_corpus(
    spec: &SyntheticLanguageSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<GeneratedUtterance>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Invalid("utterance count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&spec.id));
    let mut offset = vec![0.0; RAW_DIM];
    let mut out = Vec::with_capacity(count);
    for u in 0..count {
        let side_index = u / UTTERANCES_PER_SIDE;
        if u % UTTERANCES_PER_SIDE == 0 {
            for v in offset.iter_mut() {
                *v = spec.side_offset * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let side = format!("{}-{seed}-s{side_index:03}", spec.id);
        let len = rng.random_range(spec.transcript_len.0..=spec.transcript_len.1);
        // No character follows itself: with one phone state per character
        // a doubled letter would leave no acoustic boundary to find.
        let mut chars: Vec<usize> = Vec::with_capacity(len);
        while chars.len() < len {
            let c = rng.random_range(0..spec.charset.len());
            if chars.last() != Some(&c) {
                chars.push(c);
            }
        }
        let mut data = Vec::new();
        let mut phones = Vec::new();
        for &c in &chars {
            let frames = rng.random_range(spec.frames_per_char.0..=spec.frames_per_char.1);
            for _ in 0..frames {
                for (d, p) in spec.prototypes[c].iter().enumerate() {
                    let noise = if spec.noise > 0.0 {
                        spec.noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    data.push(p + offset[d] + noise);
                }
                phones.push(spec.phones[c]);
            }
        }
        let id = format!("{side}-u{u:05}");
        let frames = Tensor::matrix(phones.len(), RAW_DIM, data)?;
        out.push(GeneratedUtterance {
            features: quantize(&FeatureSequence::new(id.clone(), frames)?),
            id,
            language: spec.id.clone(),
            side,
            transcript: chars.iter().map(|&c| spec.charset[c]).collect(),
            phones,
        });
    }
    Ok(out)
}

/// Two training languages and one held-out target.
///
/// `alpha` and `beta` share `a`–`h` and also share the sounds behind their
/// own letters (`k l m n` in `alpha`, `w x y z` in `beta`), so a pooled
/// model cannot tell from the audio which spelling to use. `gamma` keeps
/// `a`–`d` and adds new letters with new sounds.
pub fn default_languages(seed: u64, noise: f64) -> Result<Vec<SyntheticLanguageSpec>> {
    let bank = SoundBank::generate(16, seed);
    let shared: Vec<char> = "abcdefgh".chars().collect();
    let mut langs = Vec::new();
    for (id, own) in [("alpha", "klmn"), ("beta", "wxyz")] {
        let chars: Vec<char> = shared.iter().copied().chain(own.chars()).collect();
        let sounds: Vec<usize> = (0..12).collect();
        langs.push(SyntheticLanguageSpec::from_sounds(
            id, &chars, &sounds, &bank,
        )?);
    }
    let chars: Vec<char> = "abcdprst".chars().collect();
    let sounds = [0, 1, 2, 3, 12, 13, 14, 15];
    langs.push(SyntheticLanguageSpec::from_sounds(
        "gamma", &chars, &sounds, &bank,
    )?);
    for l in &mut langs {
        l.noise = noise;
    }
    Ok(langs)
}

/// Train and eval splits per language.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub train: BTreeMap<String, Vec<GeneratedUtterance>>,
    pub eval: BTreeMap<String, Vec<GeneratedUtterance>>,
}

impl Corpus {
    /// Train utterances use `seed`, eval utterances `seed + 1`.
    pub fn generate(
        langs: &[SyntheticLanguageSpec],
        train_count: usize,
        eval_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut c = Corpus::default();
        for l in langs {
            c.train
                .insert(l.id.clone(), generate_corpus(l, train_count, seed)?);
            c.eval.insert(
                l.id.clone(),
                generate_corpus(l, eval_count, seed.wrapping_add(1))?,
            );
        }
        Ok(c)
    }

    pub fn train_of(&self, lang: &str) -> Result<&[GeneratedUtterance]> {
        self.train
            .get(lang)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    pub fn eval_of(&self, lang: &str) -> Result<&[GeneratedUtterance]> {
        self.eval
            .get(lang)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    /// Sorted distinct characters of a language's training transcripts.
    pub fn charset(&self, lang: &str) -> Result<Vec<char>> {
        let mut chars: Vec<char> = self
            .train_of(lang)?
            .iter()
            .flat_map(|u| u.transcript.chars())
            .collect();
        chars.sort_unstable();
        chars.dedup();
        Ok(chars)
    }

    /// Phone-state inventory size of a language, from its training labels.
    pub fn phone_count(&self, lang: &str) -> Result<usize> {
        Ok(self
            .train_of(lang)?
            .iter()
            .flat_map(|u| u.phones.iter())
            .max()
            .map_or(0, |m| m + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang() -> SyntheticLanguageSpec {
        default_languages(3, 1.0).unwrap().remove(0)
    }

    #[test]
    fn noiseless_frames_equal_prototypes() {
        let mut spec = lang();
        spec.noise = 0.0;
        spec.side_offset = 0.0;
        for u in generate_corpus(&spec, 5, 1).unwrap() {
            let mut t = 0;
            for ch in u.transcript.chars() {
                let c = spec.charset.iter().position(|&x| x == ch).unwrap();
                while t < u.phones.len() && u.phones[t] == spec.phones[c] {
                    for (d, p) in spec.prototypes[c].iter().enumerate() {
                        assert_eq!(u.features.frames.at(t, d), *p as f32 as f64);
                    }
                    t += 1;
                }
            }
            assert_eq!(t, u.features.len());
        }
    }

    #[test]
    fn frame_count_is_sum_of_character_durations() {
        let mut spec = lang();
        spec.frames_per_char = (3, 3);
        for u in generate_corpus(&spec, 6, 2).unwrap() {
            assert_eq!(u.features.len(), 3 * u.transcript.chars().count());
            assert!((3..=12).contains(&u.transcript.len()));
        }
    }

    #[test]
    fn generation_is_pure() {
        let spec = lang();
        assert_eq!(
            generate_corpus(&spec, 4, 9).unwrap(),
            generate_corpus(&spec, 4, 9).unwrap()
        );
        assert_ne!(
            generate_corpus(&spec, 4, 9).unwrap(),
            generate_corpus(&spec, 4, 10).unwrap()
        );
    }

    #[test]
    fn invalid_specs_fail() {
        let mut spec = lang();
        spec.charset.clear();
        assert!(generate_corpus(&spec, 1, 0).is_err());
        assert!(generate_corpus(&lang(), 0, 0).is_err());
        let mut close = lang();
        close.prototypes[1] = close.prototypes[0].clone();
        assert!(close.validate().is_err());
    }

    #[test]
    fn sides_group_consecutive_utterances() {
        let us = generate_corpus(&lang(), 12, 4).unwrap();
        assert_eq!(side_of(&us[0].id), us[0].side);
        assert_eq!(us[0].side, us[9].side);
        assert_ne!(us[9].side, us[10].side);
    }

    #[test]
    fn default_languages_roles() {
        let langs = default_languages(0, 1.0).unwrap();
        let ids: Vec<&str> = langs.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["alpha", "beta", "gamma"]);
        assert_eq!(langs[0].prototypes[8], langs[1].prototypes[8]);
        assert!(langs[2]
            .charset
            .iter()
            .any(|c| !langs[0].charset.contains(c)));
        for l in &langs {
            assert!((8..=30).contains(&l.charset.len()));
        }
    }
}
