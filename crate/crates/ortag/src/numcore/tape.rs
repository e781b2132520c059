use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{shape_err, NumError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One recorded primitive application: parents, saved data, output slot.
enum Step {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Hadamard { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Concat { parts: Vec<Var>, axis: usize },
    BroadcastRow { v: Var },
    ScaleRows { x: Var, w: Var },
    Row { x: Var, index: usize },
    StackRows { rows: Vec<Var> },
    SliceRows { x: Var, start: usize },
    GatherRows { table: Var, indices: Vec<usize> },
    Gather { x: Var, indices: Vec<usize> },
    Reshape { x: Var },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    Softmax { x: Var },
    Cumsum { x: Var },
    LogSumExp { x: Var },
    MaxOverTime { x: Var, argmax: Vec<usize> },
    MeanRows { x: Var },
    Sum { x: Var },
    Dropout { x: Var, mask_scale: Vec<f64> },
    Conv1dSame { x: Var, w: Var, width: usize },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    step: Step,
    grad: Option<Vec<f64>>,
}

/// Records primitive applications in topological order; replaying the tape
/// backwards from a scalar loss fills gradients on every node that requires
/// them. One tape per model instance; a tape is single-threaded.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor. Gradient participation follows the tensor's
    /// `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, rg, Step::Leaf)
    }

    /// Register a tensor that never participates in gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Step::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`, if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // IEEE specials are allowed on the tape: overflow during training must
    // reach the loss value so callers can detect divergence and recover.
    fn push(&mut self, value: Tensor, requires_grad: bool, step: Step) -> Var {
        self.nodes.push(Node { value, requires_grad, step, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── primitives ──────────────────────────────────────────────────────

    /// `[m,k] @ [k,n] -> [m,n]`, or `[m,k] @ [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() {
            return Err(shape_err("matmul", format!("lhs must be a matrix, got {:?}", ta.shape())));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let value = match tb.shape() {
            [k2, n] if *k2 == k => {
                let n = *n;
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..k {
                        let aij = ta.values()[i * k + j];
                        if aij == 0.0 {
                            continue;
                        }
                        let brow = &tb.values()[j * n..(j + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, b) in orow.iter_mut().zip(brow) {
                            *o += aij * b;
                        }
                    }
                }
                Tensor::matrix(m, n, out)?
            }
            [k2] if *k2 == k => {
                let mut out = vec![0.0; m];
                for (i, o) in out.iter_mut().enumerate() {
                    let arow = &ta.values()[i * k..(i + 1) * k];
                    *o = arow.iter().zip(tb.values()).map(|(x, y)| x * y).sum();
                }
                Tensor::vector(out)?
            }
            other => {
                return Err(shape_err(
                    "matmul",
                    format!("lhs {:?} incompatible with rhs {:?}", ta.shape(), other),
                ))
            }
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Step::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() {
            return Err(shape_err("transpose", format!("expected a matrix, got {:?}", t.shape())));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.values()[i * n + j];
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Transpose { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise("add", a, b, |x, y| x + y, |a, b| Step::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, |a, b| Step::Sub { a, b })
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise("hadamard", a, b, |x, y| x * y, |a, b| Step::Hadamard { a, b })
    }

    fn zip_elementwise(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        step: impl FnOnce(Var, Var) -> Step,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), values)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, step(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Scale { x, c }))
    }

    /// Concatenate vectors (`axis` 0) or matrices (`axis` 0 rows, 1 columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let ndim = self.value(parts[0]).shape().len();
        if parts.iter().any(|p| self.value(*p).shape().len() != ndim) {
            return Err(shape_err("concat", "inputs of mixed rank".into()));
        }
        if axis >= ndim {
            return Err(shape_err("concat", format!("axis {axis} out of range for rank {ndim}")));
        }
        let value = if ndim == 1 {
            let mut out = Vec::new();
            for p in parts {
                out.extend_from_slice(self.value(*p).values());
            }
            Tensor::vector(out)?
        } else if axis == 0 {
            let cols = self.value(parts[0]).cols();
            let mut rows = 0;
            let mut out = Vec::new();
            for p in parts {
                let t = self.value(*p);
                if t.cols() != cols {
                    return Err(shape_err(
                        "concat",
                        format!("column mismatch: {} vs {}", t.cols(), cols),
                    ));
                }
                rows += t.rows();
                out.extend_from_slice(t.values());
            }
            Tensor::matrix(rows, cols, out)?
        } else {
            let rows = self.value(parts[0]).rows();
            let mut cols = 0;
            for p in parts {
                let t = self.value(*p);
                if t.rows() != rows {
                    return Err(shape_err(
                        "concat",
                        format!("row mismatch: {} vs {}", t.rows(), rows),
                    ));
                }
                cols += t.cols();
            }
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let c = t.cols();
                    out[r * cols + offset..r * cols + offset + c].copy_from_slice(t.row_slice(r));
                    offset += c;
                }
            }
            Tensor::matrix(rows, cols, out)?
        };
        let rg = self.rg(parts);
        Ok(self.push(value, rg, Step::Concat { parts: parts.to_vec(), axis }))
    }

    /// Repeat a vector as every row of a `rows × len` matrix.
    pub fn broadcast_row(&mut self, v: Var, rows: usize) -> Result<Var> {
        let t = self.value(v);
        if !t.is_vector() || rows == 0 {
            return Err(shape_err(
                "broadcast_row",
                format!("expected a vector and rows > 0, got {:?} × {rows}", t.shape()),
            ));
        }
        let n = t.numel();
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(t.values());
        }
        let value = Tensor::matrix(rows, n, out)?;
        let rg = self.rg(&[v]);
        Ok(self.push(value, rg, Step::BroadcastRow { v }))
    }

    /// Scale row `t` of `x` by `w[t]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if !tx.is_matrix() || !tw.is_vector() || tw.numel() != tx.rows() {
            return Err(shape_err(
                "scale_rows",
                format!("matrix {:?} vs weights {:?}", tx.shape(), tw.shape()),
            ));
        }
        let cols = tx.cols();
        let mut out = Vec::with_capacity(tx.numel());
        for (r, wr) in tw.values().iter().enumerate() {
            out.extend(tx.row_slice(r).iter().map(|v| v * wr));
        }
        let value = Tensor::matrix(tx.rows(), cols, out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(value, rg, Step::ScaleRows { x, w }))
    }

    /// Extract row `index` of a matrix as a vector.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() || index >= t.rows() {
            return Err(shape_err(
                "row",
                format!("row {index} of {:?}", t.shape()),
            ));
        }
        let value = Tensor::vector(t.row_slice(index).to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Row { x, index }))
    }

    /// Stack equal-length vectors as matrix rows.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(shape_err("stack_rows", "no inputs".into()));
        }
        let n = self.value(rows[0]).numel();
        let mut out = Vec::with_capacity(rows.len() * n);
        for r in rows {
            let t = self.value(*r);
            if !t.is_vector() || t.numel() != n {
                return Err(shape_err(
                    "stack_rows",
                    format!("expected vectors of length {n}, got {:?}", t.shape()),
                ));
            }
            out.extend_from_slice(t.values());
        }
        let value = Tensor::matrix(rows.len(), n, out)?;
        let rg = self.rg(rows);
        Ok(self.push(value, rg, Step::StackRows { rows: rows.to_vec() }))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() || len == 0 || start + len > t.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, t.shape()),
            ));
        }
        let cols = t.cols();
        let value = Tensor::matrix(len, cols, t.values()[start * cols..(start + len) * cols].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::SliceRows { x, start }))
    }

    /// Look up rows of `table` by index (embedding gather). Gradients
    /// scatter-add back, so repeated indices accumulate.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if !t.is_matrix() || indices.is_empty() {
            return Err(shape_err(
                "gather_rows",
                format!("table {:?}, {} indices", t.shape(), indices.len()),
            ));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("index {bad} out of range for {} rows", t.rows()),
            ));
        }
        let cols = t.cols();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(indices.len(), cols, out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, rg, Step::GatherRows { table, indices: indices.to_vec() }))
    }

    /// Gather scalar entries by flat index into a vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if indices.is_empty() {
            return Err(shape_err("gather", "no indices".into()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= t.numel()) {
            return Err(shape_err(
                "gather",
                format!("flat index {bad} out of range for {} values", t.numel()),
            ));
        }
        let out = indices.iter().map(|&i| t.values()[i]).collect();
        let value = Tensor::vector(out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Gather { x, indices: indices.to_vec() }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?} changes element count", t.shape(), shape),
            ));
        }
        let value = Tensor::new(shape, t.values().to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Reshape { x }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, sigmoid_scalar, |x| Step::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, f64::tanh, |x| Step::Tanh { x })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_elementwise(x, |v| v.max(0.0), |x| Step::Relu { x })
    }

    fn map_elementwise(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        step: impl FnOnce(Var) -> Step,
    ) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| f(*v)).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, step(x)))
    }

    /// Softmax over the last axis (whole vector, or each matrix row).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let width = last_axis_width("softmax", t)?;
        let mut out = t.values().to_vec();
        for chunk in out.chunks_mut(width) {
            softmax_in_place(chunk);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Softmax { x }))
    }

    /// Cumulative sum over the last axis.
    pub fn cumsum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let width = last_axis_width("cumsum", t)?;
        let mut out = t.values().to_vec();
        for chunk in out.chunks_mut(width) {
            for i in 1..chunk.len() {
                chunk[i] += chunk[i - 1];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Cumsum { x }))
    }

    /// Monotone gate activation: cumulative sum of a softmax. Output is
    /// nondecreasing, in `(0, 1]`, and ends at 1.
    pub fn cumax(&mut self, x: Var) -> Result<Var> {
        let s = self.softmax(x)?;
        self.cumsum(s)
    }

    /// `log Σ exp` over the last axis; a vector reduces to a scalar, a
    /// matrix to one value per row.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let width = last_axis_width("logsumexp", t)?;
        let out: Vec<f64> = t.values().chunks(width).map(logsumexp_slice).collect();
        let value = if t.is_matrix() {
            Tensor::vector(out)?
        } else {
            Tensor::scalar(out[0])
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::LogSumExp { x }))
    }

    /// Per-channel max over the time (row) axis of a `T × C` matrix.
    /// Ties route the gradient to the earliest row.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() {
            return Err(shape_err("max_over_time", format!("expected a matrix, got {:?}", t.shape())));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut best = t.row_slice(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..rows {
            for (c, v) in t.row_slice(r).iter().enumerate() {
                if *v > best[c] {
                    best[c] = *v;
                    argmax[c] = r;
                }
            }
        }
        let value = Tensor::vector(best)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::MaxOverTime { x, argmax }))
    }

    /// Column means of a matrix: `T × C -> C`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_matrix() {
            return Err(shape_err("mean_rows", format!("expected a matrix, got {:?}", t.shape())));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        let value = Tensor::vector(out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::MeanRows { x }))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::scalar(t.values().iter().sum());
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Sum { x }))
    }

    /// Inverted dropout: keep with probability `1-p` and rescale by
    /// `1/(1-p)`, so inference needs no adjustment. Identity when
    /// `training` is false. The mask is a pure function of `seed`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumError::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let mask_scale: Vec<f64> = (0..t.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let values = t.values().iter().zip(&mask_scale).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), values)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Step::Dropout { x, mask_scale }))
    }

    /// Width-`l` 1-D convolution over the rows of `x` with symmetric zero
    /// padding, preserving length. `w` holds one flattened `l·C_in` filter
    /// per output channel.
    pub fn conv1d_same(&mut self, x: Var, w: Var, width: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if !tx.is_matrix() || !tw.is_matrix() {
            return Err(shape_err(
                "conv1d_same",
                format!("expected matrices, got {:?} and {:?}", tx.shape(), tw.shape()),
            ));
        }
        if width % 2 == 0 || width == 0 {
            return Err(NumError::Config(format!("conv width must be odd and positive, got {width}")));
        }
        let (t_len, c_in) = (tx.rows(), tx.cols());
        let (c_out, flat) = (tw.rows(), tw.cols());
        if flat != width * c_in {
            return Err(shape_err(
                "conv1d_same",
                format!("filters of {flat} weights do not cover width {width} × {c_in} channels"),
            ));
        }
        let half = (width - 1) / 2;
        let mut out = vec![0.0; t_len * c_out];
        for t in 0..t_len {
            for co in 0..c_out {
                let filter = tw.row_slice(co);
                let mut acc = 0.0;
                for dt in 0..width {
                    let src = t as isize + dt as isize - half as isize;
                    if src < 0 || src as usize >= t_len {
                        continue;
                    }
                    let xrow = tx.row_slice(src as usize);
                    let frow = &filter[dt * c_in..(dt + 1) * c_in];
                    acc += xrow.iter().zip(frow).map(|(a, b)| a * b).sum::<f64>();
                }
                out[t * c_out + co] = acc;
            }
        }
        let value = Tensor::matrix(t_len, c_out, out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(value, rg, Step::Conv1dSame { x, w, width }))
    }

    // ── reverse pass ────────────────────────────────────────────────────

    /// Replay the tape backwards from a scalar `loss`, filling gradients on
    /// every node that requires them. Fan-out accumulates additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for k in (0..=loss.0).rev() {
            let Some(up) = grads[k].take() else { continue };
            if self.nodes[k].requires_grad {
                self.propagate(k, &up, &mut grads);
            }
            self.nodes[k].grad = Some(up);
        }
        Ok(())
    }

    fn propagate(&self, k: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut sink = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &self.nodes[k].step {
            Step::Leaf => {}
            Step::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, kk) = (ta.rows(), ta.cols());
                if tb.is_matrix() {
                    let n = tb.cols();
                    sink(*a, &mut |da| {
                        for i in 0..m {
                            for j in 0..kk {
                                let mut acc = 0.0;
                                for c in 0..n {
                                    acc += up[i * n + c] * tb.values()[j * n + c];
                                }
                                da[i * kk + j] += acc;
                            }
                        }
                    });
                    sink(*b, &mut |db| {
                        for j in 0..kk {
                            for c in 0..n {
                                let mut acc = 0.0;
                                for i in 0..m {
                                    acc += ta.values()[i * kk + j] * up[i * n + c];
                                }
                                db[j * n + c] += acc;
                            }
                        }
                    });
                } else {
                    sink(*a, &mut |da| {
                        for i in 0..m {
                            for j in 0..kk {
                                da[i * kk + j] += up[i] * tb.values()[j];
                            }
                        }
                    });
                    sink(*b, &mut |db| {
                        for j in 0..kk {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += ta.values()[i * kk + j] * up[i];
                            }
                            db[j] += acc;
                        }
                    });
                }
            }
            Step::Transpose { x } => {
                let t = &self.nodes[x.0].value;
                let (m, n) = (t.rows(), t.cols());
                sink(*x, &mut |dx| {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] += up[j * m + i];
                        }
                    }
                });
            }
            Step::Add { a, b } => {
                sink(*a, &mut |da| add_into(da, up, 1.0));
                sink(*b, &mut |db| add_into(db, up, 1.0));
            }
            Step::Sub { a, b } => {
                sink(*a, &mut |da| add_into(da, up, 1.0));
                sink(*b, &mut |db| add_into(db, up, -1.0));
            }
            Step::Hadamard { a, b } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                sink(*a, &mut |da| mul_into(da, up, tb.values()));
                sink(*b, &mut |db| mul_into(db, up, ta.values()));
            }
            Step::Scale { x, c } => {
                sink(*x, &mut |dx| add_into(dx, up, *c));
            }
            Step::Concat { parts, axis } => {
                let ndim = self.nodes[parts[0].0].value.shape().len();
                if ndim == 1 || *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.numel();
                        sink(*p, &mut |dp| add_into(dp, &up[offset..offset + n], 1.0));
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[parts[0].0].value.rows();
                    let total_cols: usize =
                        parts.iter().map(|p| self.nodes[p.0].value.cols()).sum();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        sink(*p, &mut |dp| {
                            for r in 0..rows {
                                let src = &up[r * total_cols + offset..r * total_cols + offset + c];
                                add_into(&mut dp[r * c..(r + 1) * c], src, 1.0);
                            }
                        });
                        offset += c;
                    }
                }
            }
            Step::BroadcastRow { v } => {
                let n = self.nodes[v.0].value.numel();
                let rows = up.len() / n;
                sink(*v, &mut |dv| {
                    for r in 0..rows {
                        add_into(dv, &up[r * n..(r + 1) * n], 1.0);
                    }
                });
            }
            Step::ScaleRows { x, w } => {
                let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let cols = tx.cols();
                sink(*x, &mut |dx| {
                    for (r, wr) in tw.values().iter().enumerate() {
                        add_into(&mut dx[r * cols..(r + 1) * cols], &up[r * cols..(r + 1) * cols], *wr);
                    }
                });
                sink(*w, &mut |dw| {
                    for (r, dwr) in dw.iter_mut().enumerate() {
                        *dwr += up[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(tx.row_slice(r))
                            .map(|(u, v)| u * v)
                            .sum::<f64>();
                    }
                });
            }
            Step::Row { x, index } => {
                let cols = self.nodes[x.0].value.cols();
                sink(*x, &mut |dx| {
                    add_into(&mut dx[index * cols..(index + 1) * cols], up, 1.0);
                });
            }
            Step::StackRows { rows } => {
                let n = self.nodes[rows[0].0].value.numel();
                for (r, part) in rows.iter().enumerate() {
                    sink(*part, &mut |dp| add_into(dp, &up[r * n..(r + 1) * n], 1.0));
                }
            }
            Step::SliceRows { x, start } => {
                let cols = self.nodes[x.0].value.cols();
                sink(*x, &mut |dx| {
                    add_into(&mut dx[start * cols..start * cols + up.len()], up, 1.0);
                });
            }
            Step::GatherRows { table, indices } => {
                let cols = self.nodes[table.0].value.cols();
                sink(*table, &mut |dt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dt[i * cols..(i + 1) * cols], &up[r * cols..(r + 1) * cols], 1.0);
                    }
                });
            }
            Step::Gather { x, indices } => {
                sink(*x, &mut |dx| {
                    for (l, &i) in indices.iter().enumerate() {
                        dx[i] += up[l];
                    }
                });
            }
            Step::Reshape { x } => {
                sink(*x, &mut |dx| add_into(dx, up, 1.0));
            }
            Step::Sigmoid { x } => {
                let y = self.nodes[k].value.values();
                sink(*x, &mut |dx| {
                    for ((d, u), yi) in dx.iter_mut().zip(up).zip(y) {
                        *d += u * yi * (1.0 - yi);
                    }
                });
            }
            Step::Tanh { x } => {
                let y = self.nodes[k].value.values();
                sink(*x, &mut |dx| {
                    for ((d, u), yi) in dx.iter_mut().zip(up).zip(y) {
                        *d += u * (1.0 - yi * yi);
                    }
                });
            }
            Step::Relu { x } => {
                let input = self.nodes[x.0].value.values();
                sink(*x, &mut |dx| {
                    for ((d, u), xi) in dx.iter_mut().zip(up).zip(input) {
                        if *xi > 0.0 {
                            *d += u;
                        }
                    }
                });
            }
            Step::Softmax { x } => {
                let y = self.nodes[k].value.values();
                let width = last_axis_width("softmax", &self.nodes[k].value).expect("checked at record");
                sink(*x, &mut |dx| {
                    for (chunk, (ychunk, uchunk)) in dx
                        .chunks_mut(width)
                        .zip(y.chunks(width).zip(up.chunks(width)))
                    {
                        let dot: f64 = ychunk.iter().zip(uchunk).map(|(a, b)| a * b).sum();
                        for ((d, yi), u) in chunk.iter_mut().zip(ychunk).zip(uchunk) {
                            *d += yi * (u - dot);
                        }
                    }
                });
            }
            Step::Cumsum { x } => {
                let width = last_axis_width("cumsum", &self.nodes[k].value).expect("checked at record");
                sink(*x, &mut |dx| {
                    for (chunk, uchunk) in dx.chunks_mut(width).zip(up.chunks(width)) {
                        let mut suffix = 0.0;
                        for (d, u) in chunk.iter_mut().rev().zip(uchunk.iter().rev()) {
                            suffix += u;
                            *d += suffix;
                        }
                    }
                });
            }
            Step::LogSumExp { x } => {
                let t = &self.nodes[x.0].value;
                let width = last_axis_width("logsumexp", t).expect("checked at record");
                sink(*x, &mut |dx| {
                    for ((chunk, xchunk), u) in
                        dx.chunks_mut(width).zip(t.values().chunks(width)).zip(up)
                    {
                        let mut soft = xchunk.to_vec();
                        softmax_in_place(&mut soft);
                        for (d, s) in chunk.iter_mut().zip(&soft) {
                            *d += u * s;
                        }
                    }
                });
            }
            Step::MaxOverTime { x, argmax } => {
                let cols = self.nodes[x.0].value.cols();
                sink(*x, &mut |dx| {
                    for (c, &r) in argmax.iter().enumerate() {
                        dx[r * cols + c] += up[c];
                    }
                });
            }
            Step::MeanRows { x } => {
                let t = &self.nodes[x.0].value;
                let (rows, cols) = (t.rows(), t.cols());
                let inv = 1.0 / rows as f64;
                sink(*x, &mut |dx| {
                    for r in 0..rows {
                        add_into(&mut dx[r * cols..(r + 1) * cols], up, inv);
                    }
                });
            }
            Step::Sum { x } => {
                sink(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += up[0];
                    }
                });
            }
            Step::Dropout { x, mask_scale } => {
                sink(*x, &mut |dx| mul_into(dx, up, mask_scale));
            }
            Step::Conv1dSame { x, w, width } => {
                let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (t_len, c_in) = (tx.rows(), tx.cols());
                let c_out = tw.rows();
                let half = (width - 1) / 2;
                sink(*w, &mut |dw| {
                    for t in 0..t_len {
                        for co in 0..c_out {
                            let u = up[t * c_out + co];
                            if u == 0.0 {
                                continue;
                            }
                            for dt in 0..*width {
                                let src = t as isize + dt as isize - half as isize;
                                if src < 0 || src as usize >= t_len {
                                    continue;
                                }
                                let xrow = tx.row_slice(src as usize);
                                let drow =
                                    &mut dw[co * (width * c_in) + dt * c_in..co * (width * c_in) + (dt + 1) * c_in];
                                add_into(drow, xrow, u);
                            }
                        }
                    }
                });
                sink(*x, &mut |dx| {
                    for t in 0..t_len {
                        for co in 0..c_out {
                            let u = up[t * c_out + co];
                            if u == 0.0 {
                                continue;
                            }
                            let filter = tw.row_slice(co);
                            for dt in 0..*width {
                                let src = t as isize + dt as isize - half as isize;
                                if src < 0 || src as usize >= t_len {
                                    continue;
                                }
                                let drow = &mut dx[src as usize * c_in..(src as usize + 1) * c_in];
                                add_into(drow, &filter[dt * c_in..(dt + 1) * c_in], u);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * scale;
    }
}

fn mul_into(dst: &mut [f64], up: &[f64], factor: &[f64]) {
    for ((d, u), f) in dst.iter_mut().zip(up).zip(factor) {
        *d += u * f;
    }
}

fn last_axis_width(op: &'static str, t: &Tensor) -> Result<usize> {
    match t.shape() {
        [n] => Ok(*n),
        [_, n] => Ok(*n),
        other => Err(shape_err(op, format!("expected rank 1 or 2, got {other:?}"))),
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(chunk: &mut [f64]) {
    let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in chunk.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in chunk.iter_mut() {
        *v /= total;
    }
}

fn logsumexp_slice(chunk: &[f64]) -> f64 {
    let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + chunk.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
