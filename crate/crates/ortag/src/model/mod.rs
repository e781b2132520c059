//! End-to-end tagger assembly: token embeddings (word + argument one-hot +
//! POS one-hot) feed a bidirectional ordered-neuron LSTM; an
//! argument-conditioned attention re-weights the encoder states while a
//! widening convolution stack pools a sentence-global feature; the fused
//! features project to per-token emission scores decoded by a linear-chain
//! CRF.

mod checkpoint;
mod train;

pub use checkpoint::{load, load_from, save};
pub use train::{train, EpochStats, PlateauSchedule, TrainHistory};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusRecord, Vocab, PAD};
use crate::crf::{self, CrfError};
use crate::dualaware::{
    attend, conv_stack, fuse, AttentionParams, AttentionVars, ConvLayerVars, ConvStackParams,
};
use crate::eval::{AttemptOutcome, Attempt, Extraction, Phrase};
use crate::numcore::{NumError, Tape, Tensor, Var};
use crate::onlstm::{encode_bidirectional, GateVars, OnLstmParams, OnLstmVars};
use crate::tagspace::{
    argument_onehot, rel_index, DecodeFailure, Role, Sentence, SpanSet, TagError, ARG_PAD,
    REL_LABELS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Hyperparameters and training schedule. [`ModelConfig::default`] holds
/// the full-scale values; [`ModelConfig::desk_scale`] is small enough to
/// train in seconds on a laptop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub arg_dim: usize,
    pub hidden: usize,
    pub conv_filters: usize,
    pub conv_depth: usize,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub master_input_complement: bool,
    pub labels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            pos_dim: 59,
            arg_dim: 10,
            hidden: 200,
            conv_filters: 200,
            conv_depth: 3,
            dropout_p: 0.5,
            batch_size: 256,
            lr: 0.001,
            lr_factor: 0.1,
            lr_patience: 3,
            early_stop_patience: 10,
            max_epochs: 100,
            seed: 2024,
            master_input_complement: false,
            labels: REL_LABELS.len(),
        }
    }
}

impl ModelConfig {
    /// Shrunk dimensions for fast local runs and tests.
    pub fn desk_scale() -> Self {
        ModelConfig {
            word_dim: 50,
            hidden: 32,
            conv_filters: 32,
            conv_depth: 2,
            dropout_p: 0.1,
            batch_size: 16,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("arg_dim", self.arg_dim),
            ("hidden", self.hidden),
            ("conv_filters", self.conv_filters),
            ("conv_depth", self.conv_depth),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("labels", self.labels),
        ];
        for (name, value) in positives {
            if value == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.dropout_p >= 0.0 && self.dropout_p < 1.0) {
            return Err(ModelError::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(ModelError::Config(format!(
                "lr_factor must be in (0, 1], got {}",
                self.lr_factor
            )));
        }
        if self.arg_dim != crate::tagspace::ARG_ALPHABET.len() {
            return Err(ModelError::Config(format!(
                "arg_dim must equal the {}-symbol argument alphabet",
                crate::tagspace::ARG_ALPHABET.len()
            )));
        }
        if self.labels != REL_LABELS.len() {
            return Err(ModelError::Config(format!(
                "labels must equal the {}-symbol relation alphabet",
                REL_LABELS.len()
            )));
        }
        Ok(())
    }

    /// Apply one `key=value` override; errors name the field.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse::<T>().map_err(|e| {
                ModelError::Config(format!("config field {key}: unreadable value {value:?} ({e})"))
            })
        }
        match key.trim() {
            "word_dim" => self.word_dim = parse(key, value)?,
            "pos_dim" => self.pos_dim = parse(key, value)?,
            "arg_dim" => self.arg_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "conv_filters" => self.conv_filters = parse(key, value)?,
            "conv_depth" => self.conv_depth = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "lr_patience" => self.lr_patience = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "master_input_complement" => self.master_input_complement = parse(key, value)?,
            "labels" => self.labels = parse(key, value)?,
            other => {
                return Err(ModelError::Config(format!("unknown config field {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse a flat `key=value` config text (one pair per line, `#`
    /// comments allowed) on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ModelError::Config(format!(
                    "config line {}: expected key=value, got {line:?}",
                    lineno + 1
                )));
            };
            self.apply_kv(key, value)?;
        }
        Ok(())
    }

    /// Width of a token's input vector.
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.arg_dim + self.pos_dim
    }

    /// Width of the argument-pair embedding (two mean word embeddings).
    pub fn pair_dim(&self) -> usize {
        2 * self.word_dim
    }

    /// Width of a fused per-token feature row.
    pub fn fused_dim(&self) -> usize {
        2 * self.hidden + self.conv_filters
    }
}

/// All trainable state plus the vocabularies that index into it.
#[derive(Debug, Clone)]
pub struct TaggerParams {
    pub config: ModelConfig,
    pub word_vocab: Vocab,
    pub pos_vocab: Vocab,
    pub word_table: Tensor,
    pub fw: OnLstmParams,
    pub bw: OnLstmParams,
    pub attention: AttentionParams,
    pub conv: ConvStackParams,
    pub emit_w: Tensor,
    pub emit_b: Tensor,
    pub transitions: Tensor,
}

impl TaggerParams {
    /// Seeded initialization. `word_table` rows come from the caller
    /// (pre-trained vectors) or default to uniform noise with an all-zero
    /// PAD row.
    pub fn init(
        config: ModelConfig,
        word_vocab: Vocab,
        pos_vocab: Vocab,
        word_table: Option<Tensor>,
    ) -> Result<TaggerParams> {
        config.validate()?;
        if pos_vocab.len() > config.pos_dim {
            return Err(ModelError::Config(format!(
                "POS vocabulary has {} symbols but pos_dim is {}",
                pos_vocab.len(),
                config.pos_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let word_table = match word_table {
            Some(table) => {
                if table.shape() != [word_vocab.len(), config.word_dim] {
                    return Err(ModelError::Config(format!(
                        "word table shape {:?} does not match vocabulary {} × word_dim {}",
                        table.shape(),
                        word_vocab.len(),
                        config.word_dim
                    )));
                }
                table.with_grad()
            }
            None => {
                let mut table = Tensor::rand_uniform(
                    vec![word_vocab.len(), config.word_dim],
                    -0.05,
                    0.05,
                    &mut rng,
                )?;
                let dim = config.word_dim;
                table.values_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
                table.with_grad()
            }
        };
        let token_dim = config.token_dim();
        let fw =
            OnLstmParams::new(token_dim, config.hidden, config.master_input_complement, &mut rng)?;
        let bw =
            OnLstmParams::new(token_dim, config.hidden, config.master_input_complement, &mut rng)?;
        let attention =
            AttentionParams::new(2 * config.hidden, config.pair_dim(), config.hidden, &mut rng)?;
        let conv =
            ConvStackParams::new(token_dim, config.conv_filters, config.conv_depth, &mut rng)?;
        let fused = config.fused_dim();
        let bound = 1.0 / (fused as f64).sqrt();
        let emit_w =
            Tensor::rand_uniform(vec![config.labels, fused], -bound, bound, &mut rng)?.with_grad();
        let emit_b = Tensor::zeros(vec![config.labels])?.with_grad();
        let transitions =
            Tensor::zeros(vec![config.labels + 2, config.labels + 2])?.with_grad();
        Ok(TaggerParams {
            config,
            word_vocab,
            pos_vocab,
            word_table,
            fw,
            bw,
            attention,
            conv,
            emit_w,
            emit_b,
            transitions,
        })
    }

    /// Every trainable tensor in canonical order. Checkpoints, optimizer
    /// state, and tape registration all share this ordering.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut all = vec![&self.word_table];
        for direction in [&self.fw, &self.bw] {
            for gate in direction.gates() {
                all.extend(gate.tensors());
            }
        }
        all.extend(self.attention.tensors());
        all.extend(self.conv.tensors());
        all.push(&self.emit_w);
        all.push(&self.emit_b);
        all.push(&self.transitions);
        all
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut all: Vec<&mut Tensor> = vec![&mut self.word_table];
        for direction in [&mut self.fw, &mut self.bw] {
            for gate in direction.gates_mut() {
                all.extend(gate.tensors_mut());
            }
        }
        all.extend(self.attention.tensors_mut());
        all.extend(self.conv.tensors_mut());
        all.push(&mut self.emit_w);
        all.push(&mut self.emit_b);
        all.push(&mut self.transitions);
        all
    }

    /// Names aligned with [`Self::tensors`], for checkpoint headers.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["word_table".to_string()];
        for direction in ["fw", "bw"] {
            for gate in ["forget", "input", "cell", "output", "master_forget", "master_input"] {
                for part in ["w", "u", "b"] {
                    names.push(format!("{direction}.{gate}.{part}"));
                }
            }
        }
        for part in ["w_a", "u_a", "v"] {
            names.push(format!("attention.{part}"));
        }
        for i in 0..self.conv.layers.len() {
            names.push(format!("conv.{i}.filters"));
            names.push(format!("conv.{i}.bias"));
        }
        names.push("emit_w".into());
        names.push("emit_b".into());
        names.push("transitions".into());
        names
    }

    /// Put every parameter on `tape` as a leaf and return the handles.
    pub fn register(&self, tape: &mut Tape) -> TaggerVars {
        TaggerVars {
            word_table: tape.leaf(self.word_table.clone()),
            fw: self.fw.register(tape),
            bw: self.bw.register(tape),
            attention: self.attention.register(tape),
            conv: self.conv.register(tape),
            emit_w: tape.leaf(self.emit_w.clone()),
            emit_b: tape.leaf(self.emit_b.clone()),
            transitions: tape.leaf(self.transitions.clone()),
        }
    }

    /// Rebuild the handle struct from leaves created in [`Self::tensors`]
    /// order (gradient-check harnesses create the leaves themselves).
    pub fn vars_from_ordered(&self, vars: &[Var]) -> Result<TaggerVars> {
        let expected = self.tensors().len();
        if vars.len() != expected {
            return Err(ModelError::Config(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let word_table = next();
        let direction = |params: &OnLstmParams, next: &mut dyn FnMut() -> Var| OnLstmVars {
            forget: GateVars { w: next(), u: next(), b: next() },
            input: GateVars { w: next(), u: next(), b: next() },
            cell: GateVars { w: next(), u: next(), b: next() },
            output: GateVars { w: next(), u: next(), b: next() },
            master_forget: GateVars { w: next(), u: next(), b: next() },
            master_input: GateVars { w: next(), u: next(), b: next() },
            master_input_complement: params.master_input_complement,
            hidden: params.hidden,
        };
        let fw = direction(&self.fw, &mut next);
        let bw = direction(&self.bw, &mut next);
        let attention = AttentionVars { w_a: next(), u_a: next(), v: next() };
        let conv = self
            .conv
            .layers
            .iter()
            .map(|layer| ConvLayerVars { filters: next(), bias: next(), width: layer.width })
            .collect();
        Ok(TaggerVars {
            word_table,
            fw,
            bw,
            attention,
            conv,
            emit_w: next(),
            emit_b: next(),
            transitions: next(),
        })
    }
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct TaggerVars {
    pub word_table: Var,
    pub fw: OnLstmVars,
    pub bw: OnLstmVars,
    pub attention: AttentionVars,
    pub conv: Vec<ConvLayerVars>,
    pub emit_w: Var,
    pub emit_b: Var,
    pub transitions: Var,
}

/// One vectorized example. Index vectors may be padded past `valid_len`
/// with PAD symbols; the forward pass only reads the first `valid_len`
/// entries of each.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordInputs {
    pub word_idx: Vec<usize>,
    pub pos_idx: Vec<usize>,
    pub arg_idx: Vec<usize>,
    /// Word-table rows of the first argument's tokens.
    pub arg1_word_idx: Vec<usize>,
    /// Word-table rows of the second argument's tokens.
    pub arg2_word_idx: Vec<usize>,
    /// Gold relation-label indices, when known.
    pub gold: Option<Vec<usize>>,
    pub valid_len: usize,
}

/// Fixed-width view over a slice of examples: every index vector padded to
/// the longest sentence, real lengths kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub items: Vec<RecordInputs>,
    pub width: usize,
}

impl Batch {
    pub fn new(mut items: Vec<RecordInputs>) -> Batch {
        let width = items.iter().map(|i| i.valid_len).max().unwrap_or(0);
        for item in &mut items {
            item.pad_to(width);
        }
        Batch { items, width }
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.valid_len).collect()
    }
}

impl RecordInputs {
    /// Extend the per-token vectors to `width` with PAD symbols.
    pub fn pad_to(&mut self, width: usize) {
        assert!(width >= self.valid_len, "cannot pad below the true length");
        self.word_idx.resize(width, PAD);
        self.pos_idx.resize(width, PAD);
        self.arg_idx.resize(width, ARG_PAD);
        if let Some(gold) = &mut self.gold {
            gold.resize(width, 0);
        }
    }
}

fn vectorize_tokens(
    params: &TaggerParams,
    sentence: &Sentence,
    arg1: &SpanSet,
    arg2: &SpanSet,
) -> Result<RecordInputs> {
    let len = sentence.len();
    let word_idx: Vec<usize> = sentence
        .surfaces()
        .map(|s| params.word_vocab.lookup(&s.to_lowercase()))
        .collect();
    let pos_idx: Vec<usize> =
        sentence.tokens.iter().map(|t| params.pos_vocab.lookup(&t.pos)).collect();
    let arg_idx = argument_onehot(len, len, arg1, arg2)?;
    let arg1_word_idx = arg1.positions().iter().map(|&p| word_idx[p]).collect();
    let arg2_word_idx = arg2.positions().iter().map(|&p| word_idx[p]).collect();
    Ok(RecordInputs {
        word_idx,
        pos_idx,
        arg_idx,
        arg1_word_idx,
        arg2_word_idx,
        gold: None,
        valid_len: len,
    })
}

/// Vectorize a labeled record, including its gold relation labels.
pub fn vectorize(params: &TaggerParams, record: &CorpusRecord) -> Result<RecordInputs> {
    let mut inputs =
        vectorize_tokens(params, &record.sentence, &record.arg1, &record.arg2)?;
    let gold = record
        .tags
        .iter()
        .map(|&t| {
            rel_index(t).ok_or_else(|| {
                ModelError::Config(format!("tag {t} is outside the relation alphabet"))
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    inputs.gold = Some(gold);
    Ok(inputs)
}

/// Dropout behavior for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

fn onehot_rows(t_len: usize, dim: usize, indices: &[usize], what: &str) -> Result<Tensor> {
    let mut values = vec![0.0; t_len * dim];
    for (t, &i) in indices.iter().enumerate() {
        if i >= dim {
            return Err(ModelError::Config(format!(
                "{what} index {i} does not fit a {dim}-wide one-hot row"
            )));
        }
        values[t * dim + i] = 1.0;
    }
    Tensor::matrix(t_len, dim, values).map_err(ModelError::Num)
}

/// Run the full network for one example and return the `T × K` emission
/// scores for its `valid_len` real tokens.
pub fn forward(
    tape: &mut Tape,
    params: &TaggerParams,
    vars: &TaggerVars,
    inputs: &RecordInputs,
    mode: Mode,
) -> Result<Var> {
    let t_len = inputs.valid_len;
    if t_len == 0 {
        return Err(ModelError::Config("cannot run on a zero-length example".into()));
    }
    if inputs.word_idx.len() < t_len || inputs.pos_idx.len() < t_len || inputs.arg_idx.len() < t_len
    {
        return Err(ModelError::Config(format!(
            "index vectors shorter than valid_len {t_len}"
        )));
    }
    let config = &params.config;
    let word = tape.gather_rows(vars.word_table, &inputs.word_idx[..t_len])?;
    let arg = onehot_rows(t_len, config.arg_dim, &inputs.arg_idx[..t_len], "argument")?;
    let arg = tape.constant(arg);
    let pos = onehot_rows(t_len, config.pos_dim, &inputs.pos_idx[..t_len], "POS")?;
    let pos = tape.constant(pos);
    let x = tape.concat(&[word, arg, pos], 1)?;

    let h = encode_bidirectional(tape, &vars.fw, &vars.bw, x)?;

    let m1 = tape.gather_rows(vars.word_table, &inputs.arg1_word_idx)?;
    let m1 = tape.mean_rows(m1)?;
    let m2 = tape.gather_rows(vars.word_table, &inputs.arg2_word_idx)?;
    let m2 = tape.mean_rows(m2)?;
    let pair = tape.concat(&[m1, m2], 0)?;
    let (_alpha, local) = attend(tape, &vars.attention, h, pair)?;

    let global = conv_stack(tape, &vars.conv, x, t_len)?;
    let fused = fuse(tape, local, global)?;
    let fused = match mode {
        Mode::Train { dropout_seed } => {
            tape.dropout(fused, config.dropout_p, dropout_seed, true)?
        }
        Mode::Eval => fused,
    };
    let w_t = tape.transpose(vars.emit_w)?;
    let projected = tape.matmul(fused, w_t)?;
    let bias = tape.broadcast_row(vars.emit_b, t_len)?;
    Ok(tape.add(projected, bias)?)
}

/// Forward plus CRF negative log-likelihood of the gold labels.
pub fn loss(
    tape: &mut Tape,
    params: &TaggerParams,
    vars: &TaggerVars,
    inputs: &RecordInputs,
    mode: Mode,
) -> Result<Var> {
    let gold = inputs
        .gold
        .as_ref()
        .ok_or_else(|| ModelError::Config("example has no gold labels".into()))?;
    let emissions = forward(tape, params, vars, inputs, mode)?;
    Ok(crf::nll_on_tape(tape, emissions, vars.transitions, &gold[..inputs.valid_len])?)
}

impl TaggerParams {
    /// Emission scores for one record under evaluation mode.
    pub fn emissions(&self, record: &CorpusRecord) -> Result<Tensor> {
        let inputs = vectorize(self, record)?;
        self.emissions_for(&inputs)
    }

    pub fn emissions_for(&self, inputs: &RecordInputs) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = forward(&mut tape, self, &vars, inputs, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Mean CRF negative log-likelihood over labeled records, no dropout.
    pub fn mean_nll(&self, records: &[RecordInputs]) -> Result<f64> {
        if records.is_empty() {
            return Err(ModelError::Config("no records to score".into()));
        }
        let mut total = 0.0;
        for inputs in records {
            let gold = inputs
                .gold
                .as_ref()
                .ok_or_else(|| ModelError::Config("example has no gold labels".into()))?;
            let emissions = self.emissions_for(inputs)?;
            total += crf::nll(&emissions, &self.transitions, &gold[..inputs.valid_len])?;
        }
        Ok(total / records.len() as f64)
    }
}

/// What the tagger produced for one candidate argument pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub arg1: SpanSet,
    pub arg2: SpanSet,
    pub outcome: AttemptOutcome,
}

impl PairPrediction {
    pub fn attempt(&self, sentence: &Sentence) -> Attempt {
        Attempt {
            sentence_id: sentence.id.clone(),
            arg1: Phrase::from_span(sentence, &self.arg1),
            arg2: Phrase::from_span(sentence, &self.arg2),
            outcome: self.outcome.clone(),
        }
    }
}

/// Decode one emission matrix for a candidate pair: Viterbi, then the
/// relation-span scheme. `Missed` means the best path tagged nothing as
/// relation; `SchemeViolation` means the tags do not form a valid span.
fn decode_pair(
    params: &TaggerParams,
    sentence: &Sentence,
    arg1: &SpanSet,
    arg2: &SpanSet,
    emissions: &Tensor,
) -> Result<PairPrediction> {
    let path = crf::viterbi(emissions, &params.transitions)?;
    let tags: Vec<_> = path.labels.iter().map(|&l| REL_LABELS[l]).collect();
    let outcome = match crate::tagspace::decode_role(&tags, Role::Rel) {
        Ok(rel) => AttemptOutcome::Extracted(Extraction {
            sentence_id: sentence.id.clone(),
            arg1: Phrase::from_span(sentence, arg1),
            rel: Phrase::from_span(sentence, &rel),
            arg2: Phrase::from_span(sentence, arg2),
            confidence: path.confidence,
        }),
        Err(DecodeFailure::MissingRole(_)) => AttemptOutcome::Missed,
        Err(_) => AttemptOutcome::SchemeViolation,
    };
    Ok(PairPrediction { arg1: arg1.clone(), arg2: arg2.clone(), outcome })
}

/// Tag a sentence once per candidate argument pair. Pure: identical inputs
/// give identical outputs.
pub fn predict(
    params: &TaggerParams,
    sentence: &Sentence,
    pairs: &[(SpanSet, SpanSet)],
) -> Result<Vec<PairPrediction>> {
    let mut outcomes = Vec::with_capacity(pairs.len());
    for (arg1, arg2) in pairs {
        let inputs = vectorize_tokens(params, sentence, arg1, arg2)?;
        let emissions = params.emissions_for(&inputs)?;
        outcomes.push(decode_pair(params, sentence, arg1, arg2, &emissions)?);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests;
