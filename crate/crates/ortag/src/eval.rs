//! Scoring predicted extractions against gold: precision/recall/F1 with
//! one-to-one matching, precision-recall curves with trapezoidal AUC, the
//! overlapping-triples subset, and a four-way error taxonomy over decode
//! attempts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{normalize, CorpusRecord};
use crate::tagspace::{Sentence, SpanSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {detail}")]
    Format { path: String, line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// How a predicted relation is compared against a gold one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchCriterion {
    /// Identical relation token positions.
    ExactSpan,
    /// Identical normalized relation strings.
    ExactString,
    /// The two relations share their head (main-verb) token.
    HeadOverlap,
}

impl std::str::FromStr for MatchCriterion {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_span" => Ok(MatchCriterion::ExactSpan),
            "exact_string" => Ok(MatchCriterion::ExactString),
            "head_overlap" => Ok(MatchCriterion::HeadOverlap),
            other => Err(EvalError::Config(format!(
                "unknown matching criterion {other:?}; expected exact_span, \
                 exact_string, or head_overlap"
            ))),
        }
    }
}

impl std::fmt::Display for MatchCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchCriterion::ExactSpan => "exact_span",
            MatchCriterion::ExactString => "exact_string",
            MatchCriterion::HeadOverlap => "head_overlap",
        })
    }
}

/// One argument or relation phrase: always a string, with token positions
/// when the producer knew them (in-process predictions and corpus gold).
#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    pub text: String,
    pub positions: Option<Vec<usize>>,
}

impl Phrase {
    pub fn from_text(text: impl Into<String>) -> Phrase {
        Phrase { text: text.into(), positions: None }
    }

    pub fn with_positions(text: impl Into<String>, positions: Vec<usize>) -> Phrase {
        Phrase { text: text.into(), positions: Some(positions) }
    }

    /// Join the surfaces under `span` into a phrase carrying positions.
    pub fn from_span(sentence: &Sentence, span: &SpanSet) -> Phrase {
        let surfaces: Vec<&str> = sentence.tokens.iter().map(|t| t.surface.as_str()).collect();
        let text = span
            .positions()
            .iter()
            .map(|&p| surfaces[p])
            .collect::<Vec<_>>()
            .join(" ");
        Phrase::with_positions(text, span.positions().to_vec())
    }

    fn words(&self) -> Vec<String> {
        normalize(&self.text).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
    }
}

/// One extracted triple with the confidence the decoder assigned it.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub sentence_id: String,
    pub arg1: Phrase,
    pub rel: Phrase,
    pub arg2: Phrase,
    pub confidence: f64,
}

impl Extraction {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence.is_finite() && self.confidence > 0.0) {
            return Err(EvalError::Config(format!(
                "confidence must be finite and positive, got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

/// Gold extraction carried by a corpus record, at confidence 1.
pub fn gold_from_record(record: &CorpusRecord) -> Option<Extraction> {
    let rel = record.relation().ok()?;
    Some(Extraction {
        sentence_id: record.sentence.id.clone(),
        arg1: Phrase::from_span(&record.sentence, &record.arg1),
        rel: Phrase::from_span(&record.sentence, &rel),
        arg2: Phrase::from_span(&record.sentence, &record.arg2),
        confidence: 1.0,
    })
}

/// Closed-class words skipped when looking for a phrase's main verb.
const AUXILIARIES: &[&str] = &[
    "be", "am", "is", "are", "was", "were", "been", "being", "have", "has", "had",
    "do", "does", "did", "will", "would", "can", "could", "shall", "should", "may",
    "might", "must", "to", "not", "n't",
];

/// Index and word of the head: the first non-auxiliary word, falling back
/// to the first word.
fn head_of(phrase: &Phrase) -> Option<(usize, String)> {
    let words = phrase.words();
    let index = words
        .iter()
        .position(|w| !AUXILIARIES.contains(&w.as_str()))
        .unwrap_or(0);
    words.get(index).map(|w| (index, w.clone()))
}

/// Compare two relation phrases under `criterion`. Different sentences
/// never match.
pub fn match_relation(
    pred: &Extraction,
    gold: &Extraction,
    criterion: MatchCriterion,
) -> Result<bool> {
    if pred.sentence_id != gold.sentence_id {
        return Ok(false);
    }
    match criterion {
        MatchCriterion::ExactSpan => {
            match (&pred.rel.positions, &gold.rel.positions) {
                (Some(p), Some(g)) => Ok(p == g),
                _ => Err(EvalError::Config(
                    "exact_span matching needs token positions on both sides; \
                     use exact_string for text-only files"
                        .into(),
                )),
            }
        }
        MatchCriterion::ExactString => {
            let p = normalize(&pred.rel.text);
            Ok(!p.is_empty() && p == normalize(&gold.rel.text))
        }
        MatchCriterion::HeadOverlap => {
            let (Some((pi, pw)), Some((gi, gw))) = (head_of(&pred.rel), head_of(&gold.rel))
            else {
                return Ok(false);
            };
            if let (Some(pp), Some(gp)) = (&pred.rel.positions, &gold.rel.positions) {
                // With positions the head must be the same sentence token.
                match (pp.get(pi), gp.get(gi)) {
                    (Some(a), Some(b)) => return Ok(a == b),
                    _ => return Ok(false),
                }
            }
            Ok(pw == gw)
        }
    }
}

/// Precision/recall/F1 with raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Indices of `preds` in descending-confidence order; ties keep input order.
fn confidence_order(preds: &[Extraction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching in descending-confidence order: each
/// prediction claims the first still-unclaimed matching gold, so duplicate
/// predictions of one gold count once as a true positive and the extras as
/// false positives.
pub fn prf(
    preds: &[Extraction],
    golds: &[Extraction],
    criterion: MatchCriterion,
) -> Result<MetricsReport> {
    let mut claimed = vec![false; golds.len()];
    let mut tp = 0usize;
    for &i in &confidence_order(preds) {
        let mut matched = false;
        for (g, gold) in golds.iter().enumerate() {
            if !claimed[g] && match_relation(&preds[i], gold, criterion)? {
                claimed[g] = true;
                matched = true;
                break;
            }
        }
        if matched {
            tp += 1;
        }
    }
    let fp = preds.len() - tp;
    let fn_ = golds.len() - tp;
    let precision = if preds.is_empty() { 0.0 } else { tp as f64 / preds.len() as f64 };
    let recall = if golds.is_empty() { 0.0 } else { tp as f64 / golds.len() as f64 };
    Ok(MetricsReport { precision, recall, f1: f1_of(precision, recall), tp, fp, fn_ })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint {
    /// Confidence of the last prediction admitted at this point.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Sweep predictions in descending-confidence order, recording
/// (recall, precision) after each admission, then integrate precision over
/// recall by the trapezoid rule with an anchor at recall 0 carrying the
/// highest precision seen.
pub fn pr_curve(
    preds: &[Extraction],
    golds: &[Extraction],
    criterion: MatchCriterion,
) -> Result<PrCurve> {
    if preds.is_empty() {
        return Ok(PrCurve { points: Vec::new(), auc: 0.0 });
    }
    let mut claimed = vec![false; golds.len()];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(preds.len() + 1);
    for (k, &i) in confidence_order(preds).iter().enumerate() {
        for (g, gold) in golds.iter().enumerate() {
            if !claimed[g] && match_relation(&preds[i], gold, criterion)? {
                claimed[g] = true;
                tp += 1;
                break;
            }
        }
        let recall = if golds.is_empty() { 0.0 } else { tp as f64 / golds.len() as f64 };
        let precision = tp as f64 / (k + 1) as f64;
        points.push(PrPoint { threshold: preds[i].confidence, recall, precision });
    }
    let top = points
        .iter()
        .map(|p| p.precision)
        .fold(0.0, f64::max);
    let anchor = PrPoint { threshold: points[0].threshold, recall: 0.0, precision: top };
    points.insert(0, anchor);
    let mut auc = 0.0;
    for pair in points.windows(2) {
        auc += (pair[1].recall - pair[0].recall) * (pair[1].precision + pair[0].precision) / 2.0;
    }
    Ok(PrCurve { points, auc })
}

/// What the tagger did with one candidate argument pair.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptOutcome {
    Extracted(Extraction),
    /// Viterbi produced no relation tags at all.
    Missed,
    /// Relation tags present but not a well-formed span sequence.
    SchemeViolation,
}

/// One decode attempt, keyed by its candidate argument pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Attempt {
    pub sentence_id: String,
    pub arg1: Phrase,
    pub arg2: Phrase,
    pub outcome: AttemptOutcome,
}

/// Counts of the four error classes over gold items not credited as true
/// positives. The classes are mutually exclusive per gold item.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErrorBreakdown {
    pub missed: usize,
    pub scheme_violation: usize,
    pub wrong_start: usize,
    pub wrong_end: usize,
}

impl ErrorBreakdown {
    pub fn total(&self) -> usize {
        self.missed + self.scheme_violation + self.wrong_start + self.wrong_end
    }
}

fn pair_key(sentence_id: &str, arg1: &Phrase, arg2: &Phrase) -> (String, String, String) {
    (sentence_id.to_string(), normalize(&arg1.text), normalize(&arg2.text))
}

/// Boundary token of a relation for start/end comparison: position when
/// known, else the normalized word.
fn boundary(phrase: &Phrase, end: bool) -> String {
    if let Some(positions) = &phrase.positions {
        let p = if end { positions.last() } else { positions.first() };
        if let Some(p) = p {
            return format!("@{p}");
        }
    }
    let words = phrase.words();
    let w = if end { words.last() } else { words.first() };
    w.cloned().unwrap_or_default()
}

/// Classify each gold item by what its decode attempt did: no attempt or an
/// all-outside decode is a miss, an ill-formed tag sequence is a scheme
/// violation, and a decoded-but-unmatched relation is charged to its first
/// differing boundary, start before end.
pub fn categorize_errors(
    attempts: &[Attempt],
    golds: &[Extraction],
    criterion: MatchCriterion,
) -> Result<ErrorBreakdown> {
    let mut by_pair: BTreeMap<(String, String, String), &Attempt> = BTreeMap::new();
    for attempt in attempts {
        by_pair
            .entry(pair_key(&attempt.sentence_id, &attempt.arg1, &attempt.arg2))
            .or_insert(attempt);
    }
    let mut breakdown = ErrorBreakdown::default();
    for gold in golds {
        let attempt = by_pair.get(&pair_key(&gold.sentence_id, &gold.arg1, &gold.arg2));
        match attempt.map(|a| &a.outcome) {
            None | Some(AttemptOutcome::Missed) => breakdown.missed += 1,
            Some(AttemptOutcome::SchemeViolation) => breakdown.scheme_violation += 1,
            Some(AttemptOutcome::Extracted(pred)) => {
                if match_relation(pred, gold, criterion)? {
                    continue;
                }
                if boundary(&pred.rel, false) != boundary(&gold.rel, false) {
                    breakdown.wrong_start += 1;
                } else {
                    breakdown.wrong_end += 1;
                }
            }
        }
    }
    Ok(breakdown)
}

/// Keep the records whose sentence hosts at least two gold triples; also
/// report the kept fraction.
pub fn overlap_subset(records: &[CorpusRecord]) -> (Vec<CorpusRecord>, f64) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.sentence.id.as_str()).or_default() += 1;
    }
    let kept: Vec<CorpusRecord> = records
        .iter()
        .filter(|r| counts[r.sentence.id.as_str()] >= 2)
        .cloned()
        .collect();
    let proportion = if records.is_empty() {
        0.0
    } else {
        kept.len() as f64 / records.len() as f64
    };
    (kept, proportion)
}

/// Outcome column of an extraction file row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileOutcome {
    Ok,
    Missed,
    SchemeViolation,
}

impl std::fmt::Display for FileOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FileOutcome::Ok => "ok",
            FileOutcome::Missed => "missed",
            FileOutcome::SchemeViolation => "scheme_violation",
        })
    }
}

impl std::str::FromStr for FileOutcome {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(FileOutcome::Ok),
            "missed" => Ok(FileOutcome::Missed),
            "scheme_violation" => Ok(FileOutcome::SchemeViolation),
            other => Err(EvalError::Config(format!("unknown outcome {other:?}"))),
        }
    }
}

/// One row of a prediction or gold file:
/// `sentence_id<TAB>confidence<TAB>arg1<TAB>rel<TAB>arg2[<TAB>outcome]`.
/// Rows for missed or scheme-violating pairs leave the relation empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRow {
    pub sentence_id: String,
    pub confidence: f64,
    pub arg1: String,
    pub rel: String,
    pub arg2: String,
    pub outcome: FileOutcome,
}

impl ExtractionRow {
    /// The extraction this row asserts, if it asserts one.
    pub fn extraction(&self) -> Option<Extraction> {
        if self.outcome != FileOutcome::Ok {
            return None;
        }
        Some(Extraction {
            sentence_id: self.sentence_id.clone(),
            arg1: Phrase::from_text(&self.arg1),
            rel: Phrase::from_text(&self.rel),
            arg2: Phrase::from_text(&self.arg2),
            confidence: self.confidence,
        })
    }

    pub fn attempt(&self) -> Attempt {
        let outcome = match self.outcome {
            FileOutcome::Ok => AttemptOutcome::Extracted(Extraction {
                sentence_id: self.sentence_id.clone(),
                arg1: Phrase::from_text(&self.arg1),
                rel: Phrase::from_text(&self.rel),
                arg2: Phrase::from_text(&self.arg2),
                confidence: self.confidence,
            }),
            FileOutcome::Missed => AttemptOutcome::Missed,
            FileOutcome::SchemeViolation => AttemptOutcome::SchemeViolation,
        };
        Attempt {
            sentence_id: self.sentence_id.clone(),
            arg1: Phrase::from_text(&self.arg1),
            arg2: Phrase::from_text(&self.arg2),
            outcome,
        }
    }
}

pub fn write_extraction_file(path: &Path, rows: &[ExtractionRow]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for row in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.sentence_id, row.confidence, row.arg1, row.rel, row.arg2, row.outcome
        )?;
    }
    Ok(())
}

/// Parse extraction rows: `sentence_id<TAB>confidence<TAB>arg1<TAB>rel<TAB>arg2`
/// with an optional sixth outcome field (absent means `ok`).
pub fn parse_extraction_text(text: &str, origin: &str) -> Result<Vec<ExtractionRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(EvalError::Format {
                path: origin.to_string(),
                line: lineno,
                detail: format!("expected 5 or 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let confidence = fields[1].trim().parse::<f64>().map_err(|e| EvalError::Format {
            path: origin.to_string(),
            line: lineno,
            detail: format!("unreadable confidence: {e}"),
        })?;
        let outcome = if fields.len() == 6 {
            fields[5].trim().parse::<FileOutcome>().map_err(|e| EvalError::Format {
                path: origin.to_string(),
                line: lineno,
                detail: e.to_string(),
            })?
        } else {
            FileOutcome::Ok
        };
        rows.push(ExtractionRow {
            sentence_id: fields[0].trim().to_string(),
            confidence,
            arg1: fields[2].to_string(),
            rel: fields[3].to_string(),
            arg2: fields[4].to_string(),
            outcome,
        });
    }
    Ok(rows)
}

pub fn read_extraction_file(path: &Path) -> Result<Vec<ExtractionRow>> {
    let text = fs::read_to_string(path)?;
    parse_extraction_text(&text, &path.display().to_string())
}

/// Render a metrics report as an aligned table followed by
/// machine-greppable key=value lines.
pub fn render_metrics(report: &MetricsReport) -> String {
    format!(
        "metric     value\n\
         precision  {:.4}\n\
         recall     {:.4}\n\
         f1         {:.4}\n\
         precision={:.6} recall={:.6} f1={:.6} tp={} fp={} fn={}\n",
        report.precision,
        report.recall,
        report.f1,
        report.precision,
        report.recall,
        report.f1,
        report.tp,
        report.fp,
        report.fn_
    )
}
