//! Ordered-neurons LSTM cell and bidirectional encoder.
//!
//! Beyond the four standard gates, two master gates pass through the
//! monotone `cumax` activation, so low-index neurons forget before
//! high-index ones and updates respect a learned ordering. The cell state
//! update blends the plain LSTM update inside the overlap region of the two
//! master gates and copies or writes outside it:
//!
//! ```text
//! ω   = f̃ ∘ ĩ
//! c_t = ω ∘ (f ∘ c_{t−1} + i ∘ ĉ_t) + (f̃ − ω) ∘ c_{t−1} + (ĩ − ω) ∘ ĉ_t
//! ```
//!
//! With both master gates pinned to all-ones this reduces exactly to a
//! plain LSTM step, which the tests exploit as an oracle.

use rand::Rng;

use crate::numcore::{NumError, Result, Tape, Tensor, Var};

/// Weights for one gate: input projection, recurrent projection, bias.
#[derive(Debug, Clone)]
pub struct GateParams {
    /// hidden × input
    pub w: Tensor,
    /// hidden × hidden
    pub u: Tensor,
    /// hidden
    pub b: Tensor,
}

impl GateParams {
    fn init(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(GateParams {
            w: Tensor::rand_uniform(vec![hidden, input_dim], -bound, bound, rng)?.with_grad(),
            u: Tensor::rand_uniform(vec![hidden, hidden], -bound, bound, rng)?.with_grad(),
            b: Tensor::zeros(vec![hidden])?.with_grad(),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    fn register(&self, tape: &mut Tape) -> GateVars {
        GateVars { w: tape.leaf(self.w.clone()), u: tape.leaf(self.u.clone()), b: tape.leaf(self.b.clone()) }
    }
}

/// Tape handles for one gate's weights.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// All six gates of one direction's cell.
#[derive(Debug, Clone)]
pub struct OnLstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub cell: GateParams,
    pub output: GateParams,
    pub master_forget: GateParams,
    pub master_input: GateParams,
    /// Apply the master input gate as `1 − cumax(…)` instead of `cumax(…)`.
    pub master_input_complement: bool,
    pub input_dim: usize,
    pub hidden: usize,
}

impl OnLstmParams {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        master_input_complement: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(NumError::Config(format!(
                "cell dims must be positive, got input {input_dim}, hidden {hidden}"
            )));
        }
        Ok(OnLstmParams {
            forget: GateParams::init(input_dim, hidden, rng)?,
            input: GateParams::init(input_dim, hidden, rng)?,
            cell: GateParams::init(input_dim, hidden, rng)?,
            output: GateParams::init(input_dim, hidden, rng)?,
            master_forget: GateParams::init(input_dim, hidden, rng)?,
            master_input: GateParams::init(input_dim, hidden, rng)?,
            master_input_complement,
            input_dim,
            hidden,
        })
    }

    pub fn gates(&self) -> [&GateParams; 6] {
        [&self.forget, &self.input, &self.cell, &self.output, &self.master_forget, &self.master_input]
    }

    pub fn gates_mut(&mut self) -> [&mut GateParams; 6] {
        [
            &mut self.forget,
            &mut self.input,
            &mut self.cell,
            &mut self.output,
            &mut self.master_forget,
            &mut self.master_input,
        ]
    }

    pub fn register(&self, tape: &mut Tape) -> OnLstmVars {
        OnLstmVars {
            forget: self.forget.register(tape),
            input: self.input.register(tape),
            cell: self.cell.register(tape),
            output: self.output.register(tape),
            master_forget: self.master_forget.register(tape),
            master_input: self.master_input.register(tape),
            master_input_complement: self.master_input_complement,
            hidden: self.hidden,
        }
    }
}

/// Tape handles for a full cell.
#[derive(Debug, Clone, Copy)]
pub struct OnLstmVars {
    pub forget: GateVars,
    pub input: GateVars,
    pub cell: GateVars,
    pub output: GateVars,
    pub master_forget: GateVars,
    pub master_input: GateVars,
    pub master_input_complement: bool,
    pub hidden: usize,
}

/// Every intermediate of one cell step, exposed for diagnostics and tests.
#[derive(Debug, Clone, Copy)]
pub struct CellTrace {
    pub f: Var,
    pub i: Var,
    pub c_hat: Var,
    pub o: Var,
    pub master_f: Var,
    pub master_i: Var,
    pub omega: Var,
    pub c: Var,
    pub h: Var,
}

fn preactivation(tape: &mut Tape, gate: GateVars, x: Var, h_prev: Var) -> Result<Var> {
    let wx = tape.matmul(gate.w, x)?;
    let uh = tape.matmul(gate.u, h_prev)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, gate.b)
}

enum MasterMode {
    Learned,
    PinnedToOnes,
}

fn step_inner(
    tape: &mut Tape,
    params: &OnLstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    mode: MasterMode,
) -> Result<CellTrace> {
    let pre_f = preactivation(tape, params.forget, x, h_prev)?;
    let f = tape.sigmoid(pre_f)?;
    let pre_i = preactivation(tape, params.input, x, h_prev)?;
    let i = tape.sigmoid(pre_i)?;
    let pre_c = preactivation(tape, params.cell, x, h_prev)?;
    let c_hat = tape.tanh(pre_c)?;
    let pre_o = preactivation(tape, params.output, x, h_prev)?;
    let o = tape.sigmoid(pre_o)?;

    let (master_f, master_i) = match mode {
        MasterMode::Learned => {
            let pre_mf = preactivation(tape, params.master_forget, x, h_prev)?;
            let mf = tape.cumax(pre_mf)?;
            let pre_mi = preactivation(tape, params.master_input, x, h_prev)?;
            let mi = tape.cumax(pre_mi)?;
            let mi = if params.master_input_complement {
                let ones = tape.constant(Tensor::filled(vec![params.hidden], 1.0)?);
                tape.sub(ones, mi)?
            } else {
                mi
            };
            (mf, mi)
        }
        MasterMode::PinnedToOnes => {
            let ones = tape.constant(Tensor::filled(vec![params.hidden], 1.0)?);
            (ones, ones)
        }
    };

    let omega = tape.hadamard(master_f, master_i)?;
    let fc = tape.hadamard(f, c_prev)?;
    let ic = tape.hadamard(i, c_hat)?;
    let lstm_core = tape.add(fc, ic)?;
    let blended = tape.hadamard(omega, lstm_core)?;
    let copy_gate = tape.sub(master_f, omega)?;
    let copy_term = tape.hadamard(copy_gate, c_prev)?;
    let write_gate = tape.sub(master_i, omega)?;
    let write_term = tape.hadamard(write_gate, c_hat)?;
    let partial = tape.add(blended, copy_term)?;
    let c = tape.add(partial, write_term)?;
    let tanh_c = tape.tanh(c)?;
    let h = tape.hadamard(o, tanh_c)?;

    Ok(CellTrace { f, i, c_hat, o, master_f, master_i, omega, c, h })
}

/// One ordered-neurons step; returns the full intermediate trace.
pub fn cell_step_trace(
    tape: &mut Tape,
    params: &OnLstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<CellTrace> {
    step_inner(tape, params, x, h_prev, c_prev, MasterMode::Learned)
}

/// One ordered-neurons step; returns `(h_t, c_t)`.
pub fn cell_step(
    tape: &mut Tape,
    params: &OnLstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let trace = cell_step_trace(tape, params, x, h_prev, c_prev)?;
    Ok((trace.h, trace.c))
}

/// Diagnostic step with both master gates pinned to all-ones, which reduces
/// the update to a plain LSTM step.
pub fn cell_step_pinned_masters(
    tape: &mut Tape,
    params: &OnLstmVars,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let trace = step_inner(tape, params, x, h_prev, c_prev, MasterMode::PinnedToOnes)?;
    Ok((trace.h, trace.c))
}

/// Encode a `T × input` matrix in both directions from zero initial states;
/// row t of the result is `[h_fw(t) ; h_bw(t)]`, a `T × 2d` matrix.
pub fn encode_bidirectional(
    tape: &mut Tape,
    forward: &OnLstmVars,
    backward: &OnLstmVars,
    x: Var,
) -> Result<Var> {
    let t_len = tape.value(x).rows();
    let run = |tape: &mut Tape, params: &OnLstmVars, order: &[usize]| -> Result<Vec<Var>> {
        let mut h = tape.constant(Tensor::zeros(vec![params.hidden])?);
        let mut c = tape.constant(Tensor::zeros(vec![params.hidden])?);
        let mut states = vec![h; t_len];
        for &t in order {
            let x_t = tape.row(x, t)?;
            let (nh, nc) = cell_step(tape, params, x_t, h, c)?;
            h = nh;
            c = nc;
            states[t] = h;
        }
        Ok(states)
    };
    let fw_order: Vec<usize> = (0..t_len).collect();
    let bw_order: Vec<usize> = (0..t_len).rev().collect();
    let fw_states = run(tape, forward, &fw_order)?;
    let bw_states = run(tape, backward, &bw_order)?;
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        rows.push(tape.concat(&[fw_states[t], bw_states[t]], 0)?);
    }
    tape.stack_rows(&rows)
}
