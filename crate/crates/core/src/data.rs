//! Value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the pairing a set of embeddings comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Observation,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Text => 0,
            Modality::Observation => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Text),
            1 => Some(Modality::Observation),
            _ => None,
        }
    }
}

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                field: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    field: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(())
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|x| !x.is_finite())
            .map(|i| (i / self.cols.max(1), i % self.cols.max(1)))
    }
}

/// Precomputed encoder outputs, one row per item.
///
/// Rows are stored at 32-bit precision, matching the on-disk format.
/// Construction validates every invariant; there is no way to mutate a set
/// afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    count: usize,
    dim: usize,
    rows: Vec<f32>,
    labels: Vec<u32>,
    categories: Vec<u32>,
    modality: Modality,
    label_names: Vec<String>,
    category_names: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(
        count: usize,
        dim: usize,
        rows: Vec<f32>,
        labels: Vec<u32>,
        categories: Vec<u32>,
        modality: Modality,
    ) -> Result<Self> {
        let set = Self {
            count,
            dim,
            rows,
            labels,
            categories,
            modality,
            label_names: Vec::new(),
            category_names: Vec::new(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Attaches human-readable names indexed by label / category id.
    pub fn with_names(mut self, label_names: Vec<String>, category_names: Vec<String>) -> Self {
        self.label_names = label_names;
        self.category_names = category_names;
        self
    }

    /// Checks the structural invariants. Never panics.
    pub fn validate(&self) -> Result<()> {
        let expected = self.count.checked_mul(self.dim).ok_or_else(|| {
            Error::InvalidConfig(format!("count {} x dim {} overflows", self.count, self.dim))
        })?;
        if self.rows.len() != expected {
            return Err(Error::DimensionMismatch {
                field: "rows",
                expected,
                found: self.rows.len(),
            });
        }
        if self.labels.len() != self.count {
            return Err(Error::LengthMismatch {
                field: "labels",
                expected: self.count,
                found: self.labels.len(),
            });
        }
        if self.categories.len() != self.count {
            return Err(Error::LengthMismatch {
                field: "categories",
                expected: self.count,
                found: self.categories.len(),
            });
        }
        if let Some(i) = self.rows.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEntry {
                field: "rows",
                row: i / self.dim,
                col: i % self.dim,
            });
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f32] {
        &self.rows
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn categories(&self) -> &[u32] {
        &self.categories
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    /// Gathers the given rows into a 64-bit matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&x| f64::from(x)));
        }
        Matrix {
            rows: indices.len(),
            cols: self.dim,
            data,
        }
    }

    /// All rows as a 64-bit matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.count,
            cols: self.dim,
            data: self.rows.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// One minibatch of label-paired text and observation features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    pub text: Matrix,
    pub obs: Matrix,
    pub labels: Vec<u32>,
}

impl PairedBatch {
    pub fn new(text: Matrix, obs: Matrix, labels: Vec<u32>) -> Result<Self> {
        if text.rows() != obs.rows() {
            return Err(Error::LengthMismatch {
                field: "obs rows",
                expected: text.rows(),
                found: obs.rows(),
            });
        }
        if labels.len() != text.rows() {
            return Err(Error::LengthMismatch {
                field: "labels",
                expected: text.rows(),
                found: labels.len(),
            });
        }
        if text.rows() < 2 {
            return Err(Error::InvalidConfig(format!(
                "paired batch needs at least 2 rows, got {}",
                text.rows()
            )));
        }
        Ok(Self { text, obs, labels })
    }

    pub fn len(&self) -> usize {
        self.text.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pre-binarization logits `z`, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch(pub Matrix);

/// Sigmoid outputs `p`, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch(pub Matrix);

/// Unpacked binary codes, one byte (0 or 1) per bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBatch {
    bits: usize,
    values: Vec<u8>,
}

impl CodeBatch {
    pub fn new(bits: usize, values: Vec<u8>) -> Result<Self> {
        if bits == 0 || !values.len().is_multiple_of(bits) {
            return Err(Error::DimensionMismatch {
                field: "code values",
                expected: bits,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidConfig(format!(
                "code entry {} at ({}, {}) is not 0 or 1",
                values[i],
                i / bits,
                i % bits
            )));
        }
        Ok(Self { bits, values })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn code(&self, i: usize) -> &[u8] {
        &self.values[i * self.bits..(i + 1) * self.bits]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Codes as a 0/1 matrix, for use as constant BCE targets.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.len(),
            cols: self.bits,
            data: self.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Hyperparameters for hashing-head training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub bits: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_width: usize,
    /// Use a single linear layer instead of the two-layer perceptron.
    pub linear_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 256,
            lambda: 1.0,
            batch_size: 256,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            hidden_width: 512,
            linear_head: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits < 2 {
            return Err(Error::InvalidConfig(format!(
                "bits must be >= 2, got {}",
                self.bits
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !self.linear_head && self.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden_width must be > 0".into()));
        }
        Ok(())
    }
}
