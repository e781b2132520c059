use rand::Rng;

use super::{shape_err, NumError, Result};

/// Dense row-major tensor of `f64` values.
///
/// The gradient slot is populated by [`super::Tape::backward`] via
/// [`Tensor::accumulate_grad`]; accumulation is additive so a parameter used
/// several times (or across records of a batch) collects the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err("tensor", format!("dimensions must be positive, got {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} implies {numel} values, got {}", values.len()),
            ));
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], values: vec![x], requires_grad: false, grad: None }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Tensor::new(vec![len], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn filled(shape: Vec<usize>, x: f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![x; numel])
    }

    /// Seeded uniform init in `[lo, hi)`.
    pub fn rand_uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let values = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix, or length of a vector.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(self.is_matrix());
        self.values[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        debug_assert!(self.is_matrix());
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(NumError::Contract(format!(
                "gradient length {} does not match tensor of {} values",
                g.len(),
                self.values.len()
            )));
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (s, gi) in slot.iter_mut().zip(g) {
            *s += gi;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
