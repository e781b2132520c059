//! Linear-chain CRF over per-token emission scores: sequence scoring,
//! log-partition by the forward recursion, negative log-likelihood, and
//! unconstrained Viterbi decoding.
//!
//! The transition matrix is (K+2)×(K+2): indices `0..K` are real labels,
//! `K` is the virtual start symbol and `K+1` the virtual end symbol, used
//! only at the boundaries. Decoding is unconstrained; tag well-formedness
//! is checked downstream when sequences are turned back into spans.

use thiserror::Error;

use crate::numcore::{NumError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("label {label} out of range for {k} labels")]
    BadLabel { label: usize, k: usize },
    #[error("expected {expected} labels, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("emissions must be T×K and transitions (K+2)×(K+2), got {emissions:?} and {transitions:?}")]
    BadShapes { emissions: Vec<usize>, transitions: Vec<usize> },
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, CrfError>;

/// Label count K plus start/end indices, derived from tensor shapes.
struct Dims {
    t_len: usize,
    k: usize,
    start: usize,
    end: usize,
}

fn dims(emissions: &Tensor, transitions: &Tensor) -> Result<Dims> {
    let bad = || CrfError::BadShapes {
        emissions: emissions.shape().to_vec(),
        transitions: transitions.shape().to_vec(),
    };
    if !emissions.is_matrix() || !transitions.is_matrix() {
        return Err(bad());
    }
    let k = emissions.cols();
    if transitions.rows() != k + 2 || transitions.cols() != k + 2 {
        return Err(bad());
    }
    Ok(Dims { t_len: emissions.rows(), k, start: k, end: k + 1 })
}

fn check_labels(labels: &[usize], d: &Dims) -> Result<()> {
    if labels.len() != d.t_len {
        return Err(CrfError::BadLength { expected: d.t_len, got: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= d.k) {
        return Err(CrfError::BadLabel { label, k: d.k });
    }
    Ok(())
}

/// Path score: boundary and inter-label transitions plus per-token
/// emissions.
pub fn score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    let d = dims(emissions, transitions)?;
    check_labels(labels, &d)?;
    let mut total = transitions.at(d.start, labels[0]);
    for w in labels.windows(2) {
        total += transitions.at(w[0], w[1]);
    }
    total += transitions.at(labels[d.t_len - 1], d.end);
    for (i, &l) in labels.iter().enumerate() {
        total += emissions.at(i, l);
    }
    Ok(total)
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log Σ_y exp(score(y))` over all K^T label sequences, via the forward
/// recursion in log space.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> Result<f64> {
    let d = dims(emissions, transitions)?;
    let mut alpha: Vec<f64> = (0..d.k)
        .map(|j| transitions.at(d.start, j) + emissions.at(0, j))
        .collect();
    let mut scratch = vec![0.0; d.k];
    for t in 1..d.t_len {
        let mut next = vec![0.0; d.k];
        for (j, slot) in next.iter_mut().enumerate() {
            for (kk, s) in scratch.iter_mut().enumerate() {
                *s = alpha[kk] + transitions.at(kk, j);
            }
            *slot = logsumexp(&scratch) + emissions.at(t, j);
        }
        alpha = next;
    }
    for (j, a) in alpha.iter_mut().enumerate() {
        *a += transitions.at(j, d.end);
    }
    Ok(logsumexp(&alpha))
}

/// Training loss `log Z − score(gold)`.
pub fn nll(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(log_partition(emissions, transitions)? - score(emissions, transitions, labels)?)
}

/// A decoded sequence with its score and normalized probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub labels: Vec<usize>,
    pub score: f64,
    /// `exp(score − log Z)`, in (0, 1].
    pub confidence: f64,
}

/// Maximum-score label sequence over all K^T candidates, no structural
/// masking. Ties break to the lowest label index.
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> Result<ViterbiPath> {
    let d = dims(emissions, transitions)?;
    let mut delta: Vec<f64> = (0..d.k)
        .map(|j| transitions.at(d.start, j) + emissions.at(0, j))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(d.t_len.saturating_sub(1));
    for t in 1..d.t_len {
        let mut next = vec![f64::NEG_INFINITY; d.k];
        let mut arg = vec![0usize; d.k];
        for j in 0..d.k {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            for kk in 0..d.k {
                let cand = delta[kk] + transitions.at(kk, j);
                if cand > best {
                    best = cand;
                    best_k = kk;
                }
            }
            next[j] = best + emissions.at(t, j);
            arg[j] = best_k;
        }
        delta = next;
        back.push(arg);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_j = 0;
    for (j, dj) in delta.iter().enumerate() {
        let cand = dj + transitions.at(j, d.end);
        if cand > best {
            best = cand;
            best_j = j;
        }
    }
    let mut labels = vec![best_j];
    for arg in back.iter().rev() {
        labels.push(arg[*labels.last().expect("non-empty")]);
    }
    labels.reverse();
    // Report the canonical path score rather than the accumulated maximum,
    // so the result is bit-identical to `score` on the decoded labels.
    let best = score(emissions, transitions, &labels)?;
    let log_z = log_partition(emissions, transitions)?;
    Ok(ViterbiPath { labels, score: best, confidence: (best - log_z).exp() })
}

/// Differentiable NLL recorded on the tape, for training. `emissions` is a
/// T×K variable, `transitions` the (K+2)×(K+2) parameter.
pub fn nll_on_tape(tape: &mut Tape, emissions: Var, transitions: Var, labels: &[usize]) -> Result<Var> {
    let d = dims(tape.value(emissions), tape.value(transitions))?;
    check_labels(labels, &d)?;
    let width = d.k + 2;

    // Gold-path score: transitions along START → y… → END plus emissions.
    let mut trans_idx = Vec::with_capacity(d.t_len + 1);
    let mut path = Vec::with_capacity(d.t_len + 2);
    path.push(d.start);
    path.extend_from_slice(labels);
    path.push(d.end);
    for w in path.windows(2) {
        trans_idx.push(w[0] * width + w[1]);
    }
    let emit_idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * d.k + l).collect();
    let trans_picks = tape.gather(transitions, &trans_idx)?;
    let emit_picks = tape.gather(emissions, &emit_idx)?;
    let trans_sum = tape.sum(trans_picks)?;
    let emit_sum = tape.sum(emit_picks)?;
    let gold = tape.add(trans_sum, emit_sum)?;

    // Forward recursion. inner[k][j] is the label-to-label block of the
    // transition matrix; alpha carries log forward scores.
    let inner_idx: Vec<usize> =
        (0..d.k).flat_map(|i| (0..d.k).map(move |j| i * width + j)).collect();
    let inner_flat = tape.gather(transitions, &inner_idx)?;
    let inner = tape.reshape(inner_flat, vec![d.k, d.k])?;
    // Transposed so row j collects alpha[k] + A[k, j] for logsumexp over k.
    let inner_t = tape.transpose(inner)?;

    let start_idx: Vec<usize> = (0..d.k).map(|j| d.start * width + j).collect();
    let end_idx: Vec<usize> = (0..d.k).map(|j| j * width + d.end).collect();
    let start_row = tape.gather(transitions, &start_idx)?;
    let end_col = tape.gather(transitions, &end_idx)?;

    let first = tape.row(emissions, 0)?;
    let mut alpha = tape.add(start_row, first)?;
    for t in 1..d.t_len {
        let spread = tape.broadcast_row(alpha, d.k)?;
        let combined = tape.add(spread, inner_t)?;
        let reduced = tape.logsumexp(combined)?;
        let emit_t = tape.row(emissions, t)?;
        alpha = tape.add(reduced, emit_t)?;
    }
    let terminal = tape.add(alpha, end_col)?;
    let log_z = tape.logsumexp(terminal)?;

    Ok(tape.sub(log_z, gold)?)
}
