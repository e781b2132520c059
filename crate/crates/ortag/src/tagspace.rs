//! Overlap-aware tagging scheme: encode a (arg1, rel, arg2) triple as one
//! BIOES tag per token, decode tag sequences back into triples, and enforce
//! the word-order constraints that make a triple expressible. Overlapping
//! triples coexist by giving each triple its own tag sequence over the same
//! sentence, so no token ever needs two labels at once.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// One token: surface form plus part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: String,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: impl Into<String>) -> Self {
        Token { surface: surface.into(), pos: pos.into() }
    }
}

/// A tokenized sentence with a stable id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>) -> Result<Self, TagError> {
        if tokens.is_empty() {
            return Err(TagError::EmptySentence);
        }
        Ok(Sentence { id: id.into(), tokens })
    }

    /// Convenience constructor from whitespace-separated surfaces, all
    /// tagged with a placeholder POS.
    pub fn from_surfaces(id: impl Into<String>, text: &str) -> Result<Self, TagError> {
        let tokens = text
            .split_whitespace()
            .map(|s| Token::new(s, "X"))
            .collect();
        Sentence::new(id, tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

/// Strictly increasing token indices forming one span (possibly with gaps).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpanSet {
    positions: Vec<usize>,
}

impl SpanSet {
    pub fn new(positions: Vec<usize>) -> Result<Self, TagError> {
        if positions.is_empty() {
            return Err(TagError::EmptySpan);
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TagError::NotIncreasing { positions });
        }
        Ok(SpanSet { positions })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> usize {
        self.positions[0]
    }

    pub fn last(&self) -> usize {
        *self.positions.last().expect("span sets are non-empty")
    }

    pub fn contains(&self, index: usize) -> bool {
        self.positions.binary_search(&index).is_ok()
    }
}

/// An extraction: two arguments bracketing a relation, pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    pub arg1: SpanSet,
    pub rel: SpanSet,
    pub arg2: SpanSet,
}

impl Triple {
    pub fn new(arg1: SpanSet, rel: SpanSet, arg2: SpanSet) -> Result<Self, TagError> {
        let pairs = [(&arg1, &rel), (&arg1, &arg2), (&rel, &arg2)];
        for (a, b) in pairs {
            if a.positions().iter().any(|p| b.contains(*p)) {
                return Err(TagError::OverlappingSpans);
            }
        }
        Ok(Triple { arg1, rel, arg2 })
    }

    pub fn span(&self, role: Role) -> &SpanSet {
        match role {
            Role::Arg1 => &self.arg1,
            Role::Rel => &self.rel,
            Role::Arg2 => &self.arg2,
        }
    }
}

/// Tagging role: first argument, relation, second argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Arg1,
    Rel,
    Arg2,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Arg1, Role::Rel, Role::Arg2];

    fn prefix(self) -> &'static str {
        match self {
            Role::Arg1 => "E1",
            Role::Rel => "R",
            Role::Arg2 => "E2",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// BIOES position within a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Position {
    Begin,
    Inside,
    End,
    Single,
}

impl Position {
    fn letter(self) -> char {
        match self {
            Position::Begin => 'B',
            Position::Inside => 'I',
            Position::End => 'E',
            Position::Single => 'S',
        }
    }
}

/// One per-token label: a (role, position) pair or Outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagLabel {
    Outside,
    Tagged(Role, Position),
}

impl fmt::Display for TagLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagLabel::Outside => f.write_str("O"),
            TagLabel::Tagged(role, pos) => write!(f, "{}-{}", role.prefix(), pos.letter()),
        }
    }
}

impl FromStr for TagLabel {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, TagError> {
        if s == "O" {
            return Ok(TagLabel::Outside);
        }
        let bad = || TagError::UnknownLabel(s.to_string());
        let (role, pos) = s.split_once('-').ok_or_else(bad)?;
        let role = match role {
            "E1" => Role::Arg1,
            "R" => Role::Rel,
            "E2" => Role::Arg2,
            _ => return Err(bad()),
        };
        let pos = match pos {
            "B" => Position::Begin,
            "I" => Position::Inside,
            "E" => Position::End,
            "S" => Position::Single,
            _ => return Err(bad()),
        };
        Ok(TagLabel::Tagged(role, pos))
    }
}

/// The model's output alphabet: relation tags plus Outside (arguments are
/// pre-identified inputs, so the tagger only decides relation membership).
pub const REL_LABELS: [TagLabel; 5] = [
    TagLabel::Outside,
    TagLabel::Tagged(Role::Rel, Position::Begin),
    TagLabel::Tagged(Role::Rel, Position::Inside),
    TagLabel::Tagged(Role::Rel, Position::End),
    TagLabel::Tagged(Role::Rel, Position::Single),
];

/// Index of a label within [`REL_LABELS`], if it belongs to that alphabet.
pub fn rel_index(label: TagLabel) -> Option<usize> {
    REL_LABELS.iter().position(|l| *l == label)
}

/// The 10-symbol argument alphabet used for argument embeddings.
pub const ARG_ALPHABET: [&str; 10] =
    ["E1-B", "E1-I", "E1-E", "E1-S", "E2-B", "E2-I", "E2-E", "E2-S", "O", "PAD"];

/// Index of the `O` symbol in [`ARG_ALPHABET`].
pub const ARG_OUTSIDE: usize = 8;
/// Index of the `PAD` symbol in [`ARG_ALPHABET`].
pub const ARG_PAD: usize = 9;

/// Structural errors: malformed inputs, as opposed to constraint
/// violations, which are ordinary verdicts.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("span has no positions")]
    EmptySpan,
    #[error("span positions must be strictly increasing, got {positions:?}")]
    NotIncreasing { positions: Vec<usize> },
    #[error("spans overlap")]
    OverlappingSpans,
    #[error("token index {index} out of range for {len} tokens")]
    OutOfRange { index: usize, len: usize },
    #[error("unknown tag label {0:?}")]
    UnknownLabel(String),
    #[error("padded length {padded} shorter than sentence length {len}")]
    PadTooShort { padded: usize, len: usize },
}

/// One broken word-order rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Some Argument1 token does not precede every Relation token.
    Arg1NotBeforeRel,
    /// Some Argument2 token does not follow every Relation token.
    Arg2NotAfterRel,
    /// Relation positions are not in sentence order.
    RelOutOfOrder,
    /// A relation word does not occur in the sentence.
    RelWordMissing { word: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Arg1NotBeforeRel => f.write_str("Argument1 must precede the relation"),
            Violation::Arg2NotAfterRel => f.write_str("Argument2 must follow the relation"),
            Violation::RelOutOfOrder => f.write_str("relation words out of sentence order"),
            Violation::RelWordMissing { word } => {
                write!(f, "relation word {word:?} not in sentence")
            }
        }
    }
}

fn check_bounds(len: usize, spans: &[&[usize]]) -> Result<(), TagError> {
    for span in spans {
        if let Some(&index) = span.iter().find(|&&i| i >= len) {
            return Err(TagError::OutOfRange { index, len });
        }
        if span.is_empty() {
            return Err(TagError::EmptySpan);
        }
    }
    Ok(())
}

/// Word-order check on raw position lists (no ordering assumed), so that
/// out-of-order relation spans are observable as violations rather than
/// construction errors. Empty result means the triple is expressible.
pub fn validate_order_raw(
    sentence_len: usize,
    arg1: &[usize],
    rel: &[usize],
    arg2: &[usize],
) -> Result<Vec<Violation>, TagError> {
    check_bounds(sentence_len, &[arg1, rel, arg2])?;
    let mut violations = Vec::new();
    let rel_min = *rel.iter().min().expect("bounds check rejects empty spans");
    let rel_max = *rel.iter().max().expect("bounds check rejects empty spans");
    if arg1.iter().max().copied().expect("non-empty") >= rel_min {
        violations.push(Violation::Arg1NotBeforeRel);
    }
    if arg2.iter().min().copied().expect("non-empty") <= rel_max {
        violations.push(Violation::Arg2NotAfterRel);
    }
    if rel.windows(2).any(|w| w[1] <= w[0]) {
        violations.push(Violation::RelOutOfOrder);
    }
    Ok(violations)
}

/// Word-order check for a positional triple. Relation words trivially occur
/// in the sentence here; the missing-word rule bites in string alignment,
/// where extractors may emit words the sentence never contained.
pub fn validate_order(sentence: &Sentence, triple: &Triple) -> Result<Vec<Violation>, TagError> {
    validate_order_raw(
        sentence.len(),
        triple.arg1.positions(),
        triple.rel.positions(),
        triple.arg2.positions(),
    )
}

/// Why a triple could not be encoded.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("triple violates word-order constraints: {0:?}")]
    Rejected(Vec<Violation>),
    #[error(transparent)]
    Input(#[from] TagError),
}

/// Tag every token of `sentence` for one triple: each span becomes
/// role-S (singleton) or role-B … role-E with role-I between, every other
/// token becomes O.
pub fn encode_tags(sentence: &Sentence, triple: &Triple) -> Result<Vec<TagLabel>, EncodeError> {
    let violations = validate_order(sentence, triple)?;
    if !violations.is_empty() {
        return Err(EncodeError::Rejected(violations));
    }
    let mut tags = vec![TagLabel::Outside; sentence.len()];
    for role in Role::ALL {
        let span = triple.span(role);
        write_span(&mut tags, role, span.positions());
    }
    Ok(tags)
}

fn write_span(tags: &mut [TagLabel], role: Role, positions: &[usize]) {
    if positions.len() == 1 {
        tags[positions[0]] = TagLabel::Tagged(role, Position::Single);
        return;
    }
    for (i, &p) in positions.iter().enumerate() {
        let pos = if i == 0 {
            Position::Begin
        } else if i == positions.len() - 1 {
            Position::End
        } else {
            Position::Inside
        };
        tags[p] = TagLabel::Tagged(role, pos);
    }
}

/// Why a tag sequence failed to decode. These are verdicts, not errors:
/// a model is free to emit them and the caller counts them.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeFailure {
    #[error("expected {expected} tags, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no {0} tags present")]
    MissingRole(Role),
    #[error("{role} tags violate the S | B I* E rule")]
    SchemeViolation { role: Role },
}

/// Collect one role's span from a tag sequence, enforcing `S | B I* E` on
/// the role's subsequence (other labels, including O, are skipped, so
/// non-contiguous relations decode cleanly).
pub fn decode_role(tags: &[TagLabel], role: Role) -> Result<SpanSet, DecodeFailure> {
    let mut run: Vec<(usize, Position)> = Vec::new();
    for (i, tag) in tags.iter().enumerate() {
        if let TagLabel::Tagged(r, p) = tag {
            if *r == role {
                run.push((i, *p));
            }
        }
    }
    if run.is_empty() {
        return Err(DecodeFailure::MissingRole(role));
    }
    let violation = DecodeFailure::SchemeViolation { role };
    let shape_ok = if run.len() == 1 {
        run[0].1 == Position::Single
    } else {
        run[0].1 == Position::Begin
            && run[run.len() - 1].1 == Position::End
            && run[1..run.len() - 1].iter().all(|(_, p)| *p == Position::Inside)
    };
    if !shape_ok {
        return Err(violation);
    }
    let positions = run.into_iter().map(|(i, _)| i).collect();
    SpanSet::new(positions).map_err(|_| violation)
}

/// Decode a full tag sequence back into a triple. The relation is decoded
/// first so an all-O sequence reports a missing relation.
pub fn decode_tags(sentence_len: usize, tags: &[TagLabel]) -> Result<Triple, DecodeFailure> {
    if tags.len() != sentence_len {
        return Err(DecodeFailure::LengthMismatch { expected: sentence_len, got: tags.len() });
    }
    let rel = decode_role(tags, Role::Rel)?;
    let arg1 = decode_role(tags, Role::Arg1)?;
    let arg2 = decode_role(tags, Role::Arg2)?;
    Triple::new(arg1, rel, arg2)
        .map_err(|_| DecodeFailure::SchemeViolation { role: Role::Rel })
}

/// Per-token symbol indices into [`ARG_ALPHABET`] for a candidate argument
/// pair; positions at or past `sentence_len` get PAD.
pub fn argument_onehot(
    sentence_len: usize,
    padded_len: usize,
    arg1: &SpanSet,
    arg2: &SpanSet,
) -> Result<Vec<usize>, TagError> {
    if padded_len < sentence_len {
        return Err(TagError::PadTooShort { padded: padded_len, len: sentence_len });
    }
    check_bounds(sentence_len, &[arg1.positions(), arg2.positions()])?;
    if arg1.positions().iter().any(|p| arg2.contains(*p)) {
        return Err(TagError::OverlappingSpans);
    }
    let mut symbols = vec![ARG_OUTSIDE; sentence_len];
    for (span, base) in [(arg1, 0usize), (arg2, 4usize)] {
        let positions = span.positions();
        if positions.len() == 1 {
            symbols[positions[0]] = base + 3;
            continue;
        }
        for (i, &p) in positions.iter().enumerate() {
            symbols[p] = if i == 0 {
                base
            } else if i == positions.len() - 1 {
                base + 2
            } else {
                base + 1
            };
        }
    }
    symbols.extend(std::iter::repeat(ARG_PAD).take(padded_len - sentence_len));
    Ok(symbols)
}
