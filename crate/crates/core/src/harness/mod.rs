//! Synthetic mini-language corpora, manifests and the experiment driver.

pub mod corpus;
pub mod experiment;
pub mod manifest;
pub mod report;

pub use corpus::{
    default_languages, generate_corpus, side_of, Corpus, GeneratedUtterance, SoundBank,
    SyntheticLanguageSpec,
};
pub use experiment::{
    evaluate, normalize_sides, run_experiment, subset, train_sbn_on, ExperimentSpec, FeatureKind,
    Regime,
};
pub use manifest::{
    load_manifest, read_corpus, read_manifest, write_corpus, write_manifest, LoadedEntry,
    ManifestEntry,
};
pub use report::{emit_report, ResultRow, Results};
