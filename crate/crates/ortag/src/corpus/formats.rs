//! Line-delimited file formats: extractor outputs (TSV), tokenized
//! sentences, labeled corpus records (JSONL), word-vector tables, and
//! prediction pair requests. Each format has an in-memory `parse_*_text`
//! entry point (taking an origin label for error messages) and a `read_*`
//! wrapper that loads the file first.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusRecord, ExtractorOutput, Result};
use crate::tagspace::{Role, Sentence, SpanSet, TagLabel, Token};

/// Parsed items plus human-readable notes about skipped lines.
#[derive(Debug, Clone)]
pub struct ParseOutcome<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Tab-separated extractor outputs, one per line:
/// `sentence_id<TAB>extractor<TAB>confidence<TAB>arg1<TAB>rel<TAB>arg2`.
/// The confidence field may be empty. Malformed lines are skipped with a
/// warning rather than aborting the run.
pub fn parse_extractor_text(text: &str, origin: &str) -> ParseOutcome<ExtractorOutput> {
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            warnings.push(format!(
                "{origin}:{lineno}: expected 6 tab-separated fields, got {}",
                fields.len()
            ));
            continue;
        }
        let confidence = if fields[2].trim().is_empty() {
            None
        } else {
            match fields[2].trim().parse::<f64>() {
                Ok(c) if c.is_finite() => Some(c),
                _ => {
                    warnings.push(format!(
                        "{origin}:{lineno}: unreadable confidence {:?}",
                        fields[2]
                    ));
                    continue;
                }
            }
        };
        items.push(ExtractorOutput {
            sentence_id: fields[0].trim().to_string(),
            extractor: fields[1].trim().to_string(),
            confidence,
            arg1: fields[3].to_string(),
            rel: fields[4].to_string(),
            arg2: fields[5].to_string(),
        });
    }
    ParseOutcome { items, warnings }
}

/// Load and parse a tab-separated extractor output file.
pub fn read_extractor_file(path: &Path) -> Result<ParseOutcome<ExtractorOutput>> {
    let text = fs::read_to_string(path)?;
    Ok(parse_extractor_text(&text, &display(path)))
}

/// Tokenized sentences, one per line: `sentence_id surface_POS surface_POS …`.
/// The POS tag follows the last underscore, so surfaces may contain
/// underscores themselves. Duplicate ids keep the first occurrence.
pub fn parse_sentence_text(text: &str, origin: &str) -> ParseOutcome<Sentence> {
    let mut items: Vec<Sentence> = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    let mut warnings = Vec::new();
    'line: for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let mut tokens = Vec::new();
        for part in parts {
            let Some((surface, pos)) = part.rsplit_once('_') else {
                warnings.push(format!("{origin}:{lineno}: token {part:?} has no _POS suffix"));
                continue 'line;
            };
            if surface.is_empty() || pos.is_empty() {
                warnings.push(format!(
                    "{origin}:{lineno}: token {part:?} has an empty surface or POS"
                ));
                continue 'line;
            }
            tokens.push(Token::new(surface, pos));
        }
        if tokens.is_empty() {
            warnings.push(format!("{origin}:{lineno}: sentence has no tokens"));
            continue;
        }
        if seen.insert(id.to_string(), ()).is_some() {
            warnings.push(format!(
                "{origin}:{lineno}: duplicate sentence id {id:?}, keeping the first"
            ));
            continue;
        }
        match Sentence::new(id, tokens) {
            Ok(s) => items.push(s),
            Err(e) => warnings.push(format!("{origin}:{lineno}: {e}")),
        }
    }
    ParseOutcome { items, warnings }
}

/// Load and parse a tokenized sentence file.
pub fn read_sentence_file(path: &Path) -> Result<ParseOutcome<Sentence>> {
    let text = fs::read_to_string(path)?;
    Ok(parse_sentence_text(&text, &display(path)))
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    sentence_id: String,
    tokens: Vec<String>,
    pos: Vec<String>,
    arg1_positions: Vec<usize>,
    arg2_positions: Vec<usize>,
    tags: Vec<String>,
    #[serde(default)]
    source: String,
}

/// Write labeled records as JSON lines.
pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for record in records {
        let line = RecordLine {
            sentence_id: record.sentence.id.clone(),
            tokens: record.sentence.surfaces().map(str::to_string).collect(),
            pos: record.sentence.tokens.iter().map(|t| t.pos.clone()).collect(),
            arg1_positions: record.arg1.positions().to_vec(),
            arg2_positions: record.arg2.positions().to_vec(),
            tags: record.tags.iter().map(|t| t.to_string()).collect(),
            source: record.source.clone(),
        };
        let json = serde_json::to_string(&line)
            .map_err(|e| CorpusError::Config(format!("serializing record: {e}")))?;
        writeln!(out, "{json}")?;
    }
    Ok(())
}

fn format_err(origin: &str, line: usize, detail: impl Into<String>) -> CorpusError {
    CorpusError::Format { path: origin.to_string(), line, detail: detail.into() }
}

/// Parse labeled records back, validating that every line decodes into a
/// well-formed record (consistent lengths, parsable tags, in-range spans,
/// and a recoverable relation span).
pub fn parse_corpus_text(text: &str, origin: &str) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(line)
            .map_err(|e| format_err(origin, lineno, e.to_string()))?;
        if parsed.tokens.len() != parsed.pos.len() {
            return Err(format_err(
                origin,
                lineno,
                format!(
                    "{} tokens but {} POS tags",
                    parsed.tokens.len(),
                    parsed.pos.len()
                ),
            ));
        }
        if parsed.tags.len() != parsed.tokens.len() {
            return Err(format_err(
                origin,
                lineno,
                format!("{} tokens but {} tags", parsed.tokens.len(), parsed.tags.len()),
            ));
        }
        let tokens = parsed
            .tokens
            .iter()
            .zip(&parsed.pos)
            .map(|(s, p)| Token::new(s, p))
            .collect();
        let sentence = Sentence::new(parsed.sentence_id, tokens)
            .map_err(|e| format_err(origin, lineno, e.to_string()))?;
        let tags = parsed
            .tags
            .iter()
            .map(|t| t.parse::<TagLabel>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(origin, lineno, e.to_string()))?;
        if let Some(bad) = tags.iter().find(|t| {
            matches!(t, TagLabel::Tagged(role, _) if *role != Role::Rel)
        }) {
            return Err(format_err(
                origin,
                lineno,
                format!("tag {bad} is outside the relation alphabet"),
            ));
        }
        let arg1 = SpanSet::new(parsed.arg1_positions)
            .map_err(|e| format_err(origin, lineno, e.to_string()))?;
        let arg2 = SpanSet::new(parsed.arg2_positions)
            .map_err(|e| format_err(origin, lineno, e.to_string()))?;
        let len = sentence.tokens.len();
        for span in [&arg1, &arg2] {
            if span.last() >= len {
                return Err(format_err(
                    origin,
                    lineno,
                    format!("span position {} out of range for {len} tokens", span.last()),
                ));
            }
        }
        let record = CorpusRecord { sentence, arg1, arg2, tags, source: parsed.source };
        record
            .relation()
            .map_err(|e| format_err(origin, lineno, format!("tags decode failed: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

/// Load and parse a labeled-record JSONL file.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let text = fs::read_to_string(path)?;
    parse_corpus_text(&text, &display(path))
}

/// Whitespace-separated word vectors, one token per line:
/// `token v1 v2 … vdim`. A line whose vector length differs from `dim` is a
/// format error reported with its line number.
pub fn parse_word_vectors_text(
    text: &str,
    origin: &str,
    dim: usize,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut table = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(origin, lineno, format!("unreadable component: {e}")))?;
        if values.len() != dim {
            return Err(format_err(
                origin,
                lineno,
                format!("expected {dim} components, got {}", values.len()),
            ));
        }
        table.insert(token.to_string(), values);
    }
    Ok(table)
}

/// Load and parse a word-vector table.
pub fn read_word_vectors(path: &Path, dim: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    parse_word_vectors_text(&text, &display(path), dim)
}

/// One argument pair to decode a relation for, with its source line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRequest {
    pub line: usize,
    pub sentence_id: String,
    pub arg1: SpanSet,
    pub arg2: SpanSet,
}

fn parse_span(origin: &str, line: usize, field: &str) -> Result<SpanSet> {
    let positions = field
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format_err(origin, line, format!("unreadable position {p:?} ({e})")))
        })
        .collect::<Result<Vec<usize>>>()?;
    SpanSet::new(positions).map_err(|e| format_err(origin, line, format!("invalid span: {e}")))
}

/// Prediction requests, one per line:
/// `sentence_id<TAB>arg1 positions<TAB>arg2 positions`, with each position
/// list comma-separated and strictly ascending.
pub fn parse_pairs_text(text: &str, origin: &str) -> Result<Vec<PairRequest>> {
    let mut requests = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format_err(
                origin,
                lineno,
                format!(
                    "expected 3 tab-separated fields \
                     (sentence_id, arg1 positions, arg2 positions), got {}",
                    fields.len()
                ),
            ));
        }
        requests.push(PairRequest {
            line: lineno,
            sentence_id: fields[0].trim().to_string(),
            arg1: parse_span(origin, lineno, fields[1])?,
            arg2: parse_span(origin, lineno, fields[2])?,
        });
    }
    Ok(requests)
}

/// Load and parse a pair-request file.
pub fn read_pairs_file(path: &Path) -> Result<Vec<PairRequest>> {
    let text = fs::read_to_string(path)?;
    parse_pairs_text(&text, &display(path))
}
