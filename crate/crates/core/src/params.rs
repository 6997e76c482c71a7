//! Named parameter storage and the per-forward binding context.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of parameter tensors. Names are unique and
/// dotted by layer (`encoder.layer0.ffn.w1`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {}: expected {}x{}, got {}x{}",
                self.names[id.0],
                cur.rows(),
                cur.cols(),
                value.rows(),
                value.cols()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Registers every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|v| graph.param(v.clone())).collect()
    }
}

/// Uniform in `±√(6/(fan_in+fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    xavier_with_fans(rows, cols, rows, cols, rng)
}

pub fn xavier_with_fans(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

/// Everything a layer needs during one forward pass: the graph being
/// recorded, the bound parameter leaves, the mode, and the dropout stream.
pub struct Ctx<'a> {
    pub graph: &'a mut Graph,
    params: &'a [Var],
    training: bool,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Ctx<'a> {
    pub fn eval(graph: &'a mut Graph, params: &'a [Var]) -> Self {
        Self { graph, params, training: false, rng: None }
    }

    pub fn train(graph: &'a mut Graph, params: &'a [Var], rng: &'a mut ChaCha8Rng) -> Self {
        Self { graph, params, training: true, rng: Some(rng) }
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        match (self.training, self.rng.as_deref_mut()) {
            (true, Some(rng)) => self.graph.dropout(x, rate, true, rng),
            _ => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Param(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok(x)
            }
        }
    }
}
