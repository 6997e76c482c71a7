use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal position table, `n × d_model`.
///
/// Column `2i` holds `sin(p / 10000^(2i/d_model))`, column `2i+1` the
/// matching cosine; positions `p` are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionalEncoding {
    table: Tensor,
}

impl PositionalEncoding {
    pub fn new(len: usize, d_model: usize) -> Result<Self> {
        Ok(Self { table: positional_encode(len, d_model)? })
    }

    /// A table of zeros, used to isolate the embedding path in tests.
    pub fn disabled(len: usize, d_model: usize) -> Self {
        Self { table: Tensor::zeros(len, d_model) }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.rows() == 0
    }

    pub fn d_model(&self) -> usize {
        self.table.cols()
    }

    /// First `n` rows of the table.
    pub fn rows(&self, n: usize) -> Result<Tensor> {
        if n > self.len() {
            return Err(Error::Shape(format!("positional table has {} rows, {n} requested", self.len())));
        }
        self.table.slice_rows(0, n)
    }
}

pub fn positional_encode(n: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("d_model must be even and positive, got {d_model}")));
    }
    if n == 0 {
        return Err(Error::Config("positional table needs at least one position".into()));
    }
    Ok(Tensor::from_fn(n, d_model, |p, c| {
        let i = c / 2;
        let angle = p as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}
