//! Dense row-major tensors and training batches.

use crate::error::{check_len, invalid, Result};

/// A dense `f64` tensor stored in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) && !values.is_empty() {
            return Err(invalid("zero-sized dimension with nonempty values"));
        }
        let expected: usize = shape.iter().product();
        check_len("tensor values", expected, values.len())?;
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("row width", cols, row.len())?;
            values.extend_from_slice(row);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            values,
        })
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Number of rows of a 2-D tensor (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all dimensions after the first.
    pub fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copies the selected rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let w = self.row_width();
        let mut values = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(idx.len());
        } else {
            shape[0] = idx.len();
        }
        Self { shape, values }
    }
}

/// Supervision attached to a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class index per example (softmax cross-entropy head).
    Classes(Vec<usize>),
    /// Regression target rows (mean-squared-error head).
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(t) => Targets::Values(t.select_rows(idx)),
        }
    }
}

/// A set of examples: one input row per target.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(invalid("batch inputs must be 2-D (rows = examples)"));
        }
        check_len("batch targets", inputs.rows(), targets.len())?;
        Ok(Self { inputs, targets })
    }

    /// A batch with no examples, for loss surfaces that ignore data.
    pub fn empty() -> Self {
        Self {
            inputs: Tensor::zeros(vec![0, 0]),
            targets: Targets::Classes(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select(idx),
        }
    }

    /// Splits the given index order into consecutive batches of at most
    /// `batch_size` rows.
    pub fn chunks(&self, order: &[usize], batch_size: usize) -> Vec<Batch> {
        order.chunks(batch_size.max(1)).map(|idx| self.select(idx)).collect()
    }
}
