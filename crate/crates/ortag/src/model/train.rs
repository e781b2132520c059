//! Mini-batch training: Adam updates over mean CRF likelihood, a
//! reduce-on-plateau learning-rate schedule, early stopping on validation
//! loss, and best-epoch parameter restoration. Fully deterministic for a
//! given seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss, vectorize, Mode, ModelError, RecordInputs, Result, TaggerParams, TaggerVars};
use crate::corpus::CorpusRecord;
use crate::eval::{self, AttemptOutcome, Extraction, MatchCriterion};
use crate::numcore::{Tape, Tensor, Var};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter tensor.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Adam {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, tensors: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in
            tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v))
        {
            let values = tensor.values_mut();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                values[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Reduce the learning rate by `factor` after `patience` consecutive
/// epochs without validation-loss improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize) -> PlateauSchedule {
        PlateauSchedule { lr, factor, patience, best: f64::INFINITY, stale: 0 }
    }

    /// Feed one epoch's validation loss; returns whether it improved on
    /// the best seen so far.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
        }
        false
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// Line-delimited metrics log, one `key=value` row per epoch.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!(
                "epoch={} train_loss={:.6} val_loss={:.6} val_p={:.4} val_r={:.4} \
                 val_f1={:.4} lr={}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_precision, e.val_recall, e.val_f1, e.lr
            ));
        }
        out.push_str(&format!(
            "best_epoch={} best_val_loss={:.6}\n",
            self.best_epoch, self.best_val_loss
        ));
        out
    }
}

fn snapshot(params: &TaggerParams) -> Vec<Tensor> {
    params.tensors().into_iter().cloned().collect()
}

fn restore(params: &mut TaggerParams, saved: &[Tensor]) {
    for (slot, tensor) in params.tensors_mut().into_iter().zip(saved) {
        *slot = tensor.clone();
    }
}

/// Relation-level precision/recall/F1 of the current params on a split,
/// matching decoded spans exactly against the gold spans.
fn validation_f1(
    params: &TaggerParams,
    records: &[CorpusRecord],
    inputs: &[RecordInputs],
) -> Result<(f64, f64, f64)> {
    let mut preds: Vec<Extraction> = Vec::new();
    let mut golds: Vec<Extraction> = Vec::new();
    for (record, item) in records.iter().zip(inputs) {
        let gold = eval::gold_from_record(record).ok_or_else(|| {
            ModelError::Config(format!(
                "record in sentence {} has no decodable relation",
                record.sentence.id
            ))
        })?;
        golds.push(gold);
        let emissions = params.emissions_for(item)?;
        let decoded =
            super::decode_pair(params, &record.sentence, &record.arg1, &record.arg2, &emissions)?;
        if let AttemptOutcome::Extracted(extraction) = decoded.outcome {
            preds.push(extraction);
        }
    }
    let report = eval::prf(&preds, &golds, MatchCriterion::ExactSpan)
        .map_err(|e| ModelError::Config(e.to_string()))?;
    Ok((report.precision, report.recall, report.f1))
}

/// Optimize `params` in place and return the per-epoch history. The
/// parameters left behind are those of the best validation epoch.
pub fn train(
    params: &mut TaggerParams,
    train_records: &[CorpusRecord],
    val_records: &[CorpusRecord],
) -> Result<TrainHistory> {
    if train_records.is_empty() || val_records.is_empty() {
        return Err(ModelError::Config("training needs non-empty train and validation splits".into()));
    }
    let config = params.config.clone();
    let train_inputs: Vec<RecordInputs> =
        train_records.iter().map(|r| vectorize(params, r)).collect::<Result<_>>()?;
    let val_inputs: Vec<RecordInputs> =
        val_records.iter().map(|r| vectorize(params, r)).collect::<Result<_>>()?;

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
    let mut adam = Adam::new(&sizes);
    let mut schedule = PlateauSchedule::new(config.lr, config.lr_factor, config.lr_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_seed = config.seed;

    let mut best: Vec<Tensor> = snapshot(params);
    let mut best_epoch = 0usize;
    let mut best_val_loss = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut history = Vec::new();

    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let lr_in_effect = schedule.lr;
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape = Tape::new();
                let vars = params.register(&mut tape);
                dropout_seed = dropout_seed.wrapping_add(1);
                let nll = loss(
                    &mut tape,
                    params,
                    &vars,
                    &train_inputs[i],
                    Mode::Train { dropout_seed },
                )?;
                let value = tape.value(nll).values()[0];
                if !value.is_finite() {
                    return Err(ModelError::Diverged { epoch, batch: batch_no });
                }
                batch_loss += value;
                tape.backward(nll)?;
                accumulate(&tape, &ordered_vars(&vars), &mut grads);
            }
            let scale = 1.0 / chunk.len() as f64;
            for grad in &mut grads {
                for g in grad.iter_mut() {
                    *g *= scale;
                }
            }
            let mut tensors = params.tensors_mut();
            adam.step(&mut tensors, &grads, lr_in_effect);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_inputs.len() as f64;
        let val_loss = params.mean_nll(&val_inputs)?;
        if !val_loss.is_finite() {
            return Err(ModelError::Diverged { epoch, batch: 0 });
        }
        let (val_precision, val_recall, val_f1) = validation_f1(params, val_records, &val_inputs)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_precision,
            val_recall,
            val_f1,
            lr: lr_in_effect,
        });
        if schedule.observe(val_loss) {
            best = snapshot(params);
            best_epoch = epoch;
            best_val_loss = val_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.early_stop_patience {
                break;
            }
        }
    }
    restore(params, &best);
    Ok(TrainHistory { epochs: history, best_epoch, best_val_loss })
}

/// Tape handles in [`TaggerParams::tensors`] order.
fn ordered_vars(vars: &TaggerVars) -> Vec<Var> {
    let mut all = vec![vars.word_table];
    for direction in [&vars.fw, &vars.bw] {
        for gate in [
            &direction.forget,
            &direction.input,
            &direction.cell,
            &direction.output,
            &direction.master_forget,
            &direction.master_input,
        ] {
            all.extend([gate.w, gate.u, gate.b]);
        }
    }
    all.extend([vars.attention.w_a, vars.attention.u_a, vars.attention.v]);
    for layer in &vars.conv {
        all.extend([layer.filters, layer.bias]);
    }
    all.extend([vars.emit_w, vars.emit_b, vars.transitions]);
    all
}

/// Sum each leaf's gradient into the accumulator, batch-index order.
fn accumulate(tape: &Tape, vars: &[Var], grads: &mut [Vec<f64>]) {
    for (var, acc) in vars.iter().zip(grads) {
        if let Some(grad) = tape.grad(*var) {
            for (slot, g) in acc.iter_mut().zip(grad) {
                *slot += g;
            }
        }
    }
}
