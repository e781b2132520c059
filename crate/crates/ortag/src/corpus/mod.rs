//! Corpus bootstrapping: intersect the triples that several extraction
//! systems agree on, align the agreed phrases back onto token positions,
//! reject triples the word-order constraints cannot express, and emit
//! labeled records plus train/validation splits, vocabularies, and the
//! pre-trained word-embedding table.

mod formats;

pub use formats::{
    parse_corpus_text, parse_extractor_text, parse_pairs_text, parse_sentence_text,
    parse_word_vectors_text, read_corpus, read_extractor_file, read_pairs_file,
    read_sentence_file, read_word_vectors, write_corpus, PairRequest, ParseOutcome,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numcore::Tensor;
use crate::tagspace::{
    self, Role, Sentence, SpanSet, TagError, TagLabel, Triple,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {detail}")]
    Format { path: String, line: usize, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tag(#[from] TagError),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One triple as reported by one external extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorOutput {
    pub sentence_id: String,
    pub extractor: String,
    pub confidence: Option<f64>,
    pub arg1: String,
    pub rel: String,
    pub arg2: String,
}

/// A normalized triple that enough extractors agreed on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AgreedTriple {
    pub sentence_id: String,
    pub arg1: String,
    pub rel: String,
    pub arg2: String,
    /// Which extractors produced it, sorted.
    pub extractors: Vec<String>,
}

/// One training example: a sentence, a candidate argument pair, and the
/// relation-only gold tags for that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub sentence: Sentence,
    pub arg1: SpanSet,
    pub arg2: SpanSet,
    /// One label per token from the relation alphabet {O, R-B, R-I, R-E, R-S}.
    pub tags: Vec<TagLabel>,
    pub source: String,
}

impl CorpusRecord {
    /// The relation span the tags encode.
    pub fn relation(&self) -> std::result::Result<SpanSet, tagspace::DecodeFailure> {
        tagspace::decode_role(&self.tags, Role::Rel)
    }
}

/// Phrase normalization used for agreement testing: lowercase, collapse
/// whitespace, strip punctuation off the end of the phrase.
pub fn normalize(phrase: &str) -> String {
    let mut collapsed = phrase.split_whitespace().collect::<Vec<_>>().join(" ");
    while collapsed.ends_with(|c: char| c.is_ascii_punctuation()) {
        collapsed.pop();
    }
    while collapsed.ends_with(' ') {
        collapsed.pop();
    }
    collapsed.to_lowercase()
}

/// Counters from one [`intersect`] run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntersectStats {
    pub records_seen: usize,
    pub skipped_malformed: usize,
    pub dropped_low_confidence: usize,
    pub agreed: usize,
}

#[derive(Debug, Clone)]
pub struct IntersectOutcome {
    pub agreed: Vec<AgreedTriple>,
    pub stats: IntersectStats,
    pub warnings: Vec<String>,
}

/// Keep the triples that at least `required` distinct extractors produced
/// with identical normalized phrases. Outputs with a confidence are kept
/// only when it exceeds `min_confidence`; outputs without one always count.
pub fn intersect(
    outputs: &[ExtractorOutput],
    required: usize,
    min_confidence: f64,
) -> Result<IntersectOutcome> {
    if required < 2 {
        return Err(CorpusError::Config(format!(
            "agreement threshold must be at least 2, got {required}"
        )));
    }
    let mut stats = IntersectStats::default();
    let mut warnings = Vec::new();
    let mut by_triple: BTreeMap<(String, String, String, String), BTreeSet<String>> =
        BTreeMap::new();
    for output in outputs {
        stats.records_seen += 1;
        if output.arg1.trim().is_empty()
            || output.rel.trim().is_empty()
            || output.arg2.trim().is_empty()
        {
            stats.skipped_malformed += 1;
            warnings.push(format!(
                "skipping {}/{}: empty phrase field",
                output.sentence_id, output.extractor
            ));
            continue;
        }
        if let Some(c) = output.confidence {
            if !(c > min_confidence) {
                stats.dropped_low_confidence += 1;
                continue;
            }
        }
        let key = (
            output.sentence_id.clone(),
            normalize(&output.arg1),
            normalize(&output.rel),
            normalize(&output.arg2),
        );
        if key.1.is_empty() || key.2.is_empty() || key.3.is_empty() {
            stats.skipped_malformed += 1;
            warnings.push(format!(
                "skipping {}/{}: phrase empty after normalization",
                output.sentence_id, output.extractor
            ));
            continue;
        }
        by_triple.entry(key).or_default().insert(output.extractor.clone());
    }
    let agreed: Vec<AgreedTriple> = by_triple
        .into_iter()
        .filter(|(_, extractors)| extractors.len() >= required)
        .map(|((sentence_id, arg1, rel, arg2), extractors)| AgreedTriple {
            sentence_id,
            arg1,
            rel,
            arg2,
            extractors: extractors.into_iter().collect(),
        })
        .collect();
    stats.agreed = agreed.len();
    Ok(IntersectOutcome { agreed, stats, warnings })
}

fn match_phrase_from(
    surfaces: &[String],
    phrase: &str,
    start: usize,
) -> Option<Vec<usize>> {
    let mut cursor = start;
    let mut positions = Vec::new();
    for word in phrase.split_whitespace() {
        let found = (cursor..surfaces.len()).find(|&i| surfaces[i] == word)?;
        positions.push(found);
        cursor = found + 1;
    }
    if positions.is_empty() {
        None
    } else {
        Some(positions)
    }
}

/// Map a phrase triple onto token positions: each phrase's words are
/// matched left-to-right (case-insensitive, leftmost occurrence), with
/// arg1 strictly before the relation and arg2 strictly after it. Returns
/// `None` when a word is missing or the ordering cannot be satisfied.
pub fn align_triple(
    sentence: &Sentence,
    arg1: &str,
    rel: &str,
    arg2: &str,
) -> Option<Triple> {
    let surfaces: Vec<String> = sentence.surfaces().map(str::to_lowercase).collect();
    let arg1 = normalize(arg1);
    let rel = normalize(rel);
    let arg2 = normalize(arg2);
    let arg1_pos = match_phrase_from(&surfaces, &arg1, 0)?;
    let rel_pos = match_phrase_from(&surfaces, &rel, arg1_pos.last()? + 1)?;
    let arg2_pos = match_phrase_from(&surfaces, &arg2, rel_pos.last()? + 1)?;
    let triple = Triple::new(
        SpanSet::new(arg1_pos).ok()?,
        SpanSet::new(rel_pos).ok()?,
        SpanSet::new(arg2_pos).ok()?,
    )
    .ok()?;
    match tagspace::validate_order(sentence, &triple) {
        Ok(v) if v.is_empty() => Some(triple),
        _ => None,
    }
}

/// Counters from one [`build_records`] run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub sentences: usize,
    pub triples_in: usize,
    pub records_out: usize,
    pub missing_sentence: usize,
    pub unalignable: usize,
    pub duplicates: usize,
    /// Fraction of emitted records sharing at least one token position with
    /// another record of the same sentence.
    pub overlap_proportion: f64,
}

fn relation_only_tags(sentence: &Sentence, triple: &Triple) -> Option<Vec<TagLabel>> {
    let full = tagspace::encode_tags(sentence, triple).ok()?;
    Some(
        full.into_iter()
            .map(|label| match label {
                TagLabel::Tagged(Role::Rel, _) => label,
                _ => TagLabel::Outside,
            })
            .collect(),
    )
}

/// Turn agreed triples into labeled records: align, reject the
/// inexpressible, tag, and de-duplicate.
pub fn build_records(
    sentences: &BTreeMap<String, Sentence>,
    agreed: &[AgreedTriple],
) -> (Vec<CorpusRecord>, BuildStats) {
    let mut stats = BuildStats {
        sentences: sentences.len(),
        triples_in: agreed.len(),
        ..BuildStats::default()
    };
    let mut seen: BTreeSet<(String, Vec<usize>, Vec<usize>, Vec<usize>)> = BTreeSet::new();
    let mut records = Vec::new();
    for triple in agreed {
        let Some(sentence) = sentences.get(&triple.sentence_id) else {
            stats.missing_sentence += 1;
            continue;
        };
        let Some(aligned) = align_triple(sentence, &triple.arg1, &triple.rel, &triple.arg2)
        else {
            stats.unalignable += 1;
            continue;
        };
        let key = (
            triple.sentence_id.clone(),
            aligned.arg1.positions().to_vec(),
            aligned.rel.positions().to_vec(),
            aligned.arg2.positions().to_vec(),
        );
        if !seen.insert(key) {
            stats.duplicates += 1;
            continue;
        }
        let Some(tags) = relation_only_tags(sentence, &aligned) else {
            stats.unalignable += 1;
            continue;
        };
        records.push(CorpusRecord {
            sentence: sentence.clone(),
            arg1: aligned.arg1,
            arg2: aligned.arg2,
            tags,
            source: triple.extractors.join("+"),
        });
    }
    stats.records_out = records.len();
    stats.overlap_proportion = overlap_proportion(&records);
    (records, stats)
}

fn record_positions(record: &CorpusRecord) -> BTreeSet<usize> {
    let mut positions: BTreeSet<usize> = record.arg1.positions().iter().copied().collect();
    positions.extend(record.arg2.positions());
    if let Ok(rel) = record.relation() {
        positions.extend(rel.positions());
    }
    positions
}

/// Fraction of records sharing a token position with another record of the
/// same sentence.
pub fn overlap_proportion(records: &[CorpusRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let mut by_sentence: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_sentence.entry(r.sentence.id.as_str()).or_default().push(i);
    }
    let position_sets: Vec<BTreeSet<usize>> = records.iter().map(record_positions).collect();
    let mut overlapping = 0usize;
    for indices in by_sentence.values() {
        for &i in indices {
            let hit = indices.iter().any(|&j| {
                j != i && !position_sets[i].is_disjoint(&position_sets[j])
            });
            if hit {
                overlapping += 1;
            }
        }
    }
    overlapping as f64 / records.len() as f64
}

/// Sentence-grouped split: every record of a sentence lands on the same
/// side. Deterministic for a given seed.
pub fn split(
    records: Vec<CorpusRecord>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<CorpusRecord>, Vec<CorpusRecord>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(CorpusError::Config(format!(
            "validation fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut ids: Vec<&str> = records
        .iter()
        .map(|r| r.sentence.id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(CorpusError::Config(format!(
            "need at least 2 distinct sentences to split, got {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_val = ((ids.len() as f64 * val_fraction).round() as usize).clamp(1, ids.len() - 1);
    let val_ids: BTreeSet<String> = ids[..n_val].iter().map(|s| s.to_string()).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for record in records {
        if val_ids.contains(&record.sentence.id) {
            val.push(record);
        } else {
            train.push(record);
        }
    }
    Ok((train, val))
}

/// Index of the unknown-token symbol.
pub const UNK: usize = 0;
/// Index of the padding symbol.
pub const PAD: usize = 1;

/// Token-to-index map with UNK and PAD reserved at indices 0 and 1.
/// Construction order is sorted, so the mapping is a pure function of the
/// token set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub const UNK_SYMBOL: &'static str = "<unk>";
    pub const PAD_SYMBOL: &'static str = "<pad>";

    pub fn build<I, S>(tokens: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != Self::UNK_SYMBOL && t != Self::PAD_SYMBOL)
            .collect();
        let mut items = vec![Self::UNK_SYMBOL.to_string(), Self::PAD_SYMBOL.to_string()];
        items.extend(unique);
        let index = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { items, index }
    }

    /// Rebuild from an item list whose first two entries must be UNK/PAD
    /// (checkpoint loading).
    pub fn from_items(items: Vec<String>) -> Result<Vocab> {
        if items.len() < 2
            || items[UNK] != Self::UNK_SYMBOL
            || items[PAD] != Self::PAD_SYMBOL
        {
            return Err(CorpusError::Config(
                "vocabulary must start with the UNK and PAD symbols".into(),
            ));
        }
        let index: BTreeMap<String, usize> = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != items.len() {
            return Err(CorpusError::Config("vocabulary contains duplicates".into()));
        }
        Ok(Vocab { items, index })
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Coverage counters from [`load_word_vectors`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmbeddingStats {
    pub from_file: usize,
    pub randomly_initialized: usize,
}

/// Build the trainable word-embedding table for `vocab`: rows present in
/// the vectors file are copied, missing rows get seeded uniform values in
/// [−0.05, 0.05], and PAD stays all-zero so padding never contributes.
pub fn load_word_vectors(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<(Tensor, EmbeddingStats)> {
    if dim == 0 {
        return Err(CorpusError::Config("embedding dimension must be positive".into()));
    }
    let file_vectors = formats::read_word_vectors(path, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = EmbeddingStats::default();
    let mut values = Vec::with_capacity(vocab.len() * dim);
    for (i, token) in vocab.items().iter().enumerate() {
        if i == PAD {
            values.extend(std::iter::repeat(0.0).take(dim));
            continue;
        }
        match file_vectors.get(token) {
            Some(row) => {
                stats.from_file += 1;
                values.extend_from_slice(row);
            }
            None => {
                stats.randomly_initialized += 1;
                values.extend((0..dim).map(|_| rng.gen_range(-0.05..0.05)));
            }
        }
    }
    let table = Tensor::matrix(vocab.len(), dim, values)
        .map_err(|e| CorpusError::Config(e.to_string()))?
        .with_grad();
    Ok((table, stats))
}
