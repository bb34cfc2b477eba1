use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of doubles with an optional gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
        }
    }

    /// Glorot-uniform initialisation for a `[fan_in, fan_out]` weight matrix.
    pub fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor {
            shape: vec![fan_in, fan_out],
            data,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The tensor viewed as a matrix: 1-D tensors are a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [first, rest @ ..] => (*first, rest.iter().product()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named trainable parameters plus the optimizer's per-parameter moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    pub(crate) moments: BTreeMap<String, MomentState>,
    pub(crate) step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    /// Adds `grad` into the accumulator of parameter `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let t = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("gradient for unknown parameter `{name}`")))?;
        if grad.len() != t.numel() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has {} values, parameter has shape {:?}",
                grad.len(),
                t.shape
            )));
        }
        match &mut t.grad {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, g)| *a += g),
            None => t.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    /// Number of optimizer steps taken so far.
    pub fn optimizer_step(&self) -> u64 {
        self.step
    }

    /// A copy holding only the parameter values (no gradients, no optimizer state).
    pub fn snapshot(&self) -> ParamStore {
        let params = self
            .params
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    Tensor {
                        shape: t.shape.clone(),
                        data: t.data.clone(),
                        grad: None,
                    },
                )
            })
            .collect();
        ParamStore {
            params,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.snapshot().params
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> Result<Self> {
        for (name, t) in &map {
            let numel: usize = t.shape.iter().product();
            if numel != t.data.len() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?} but {} values",
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(ParamStore {
            params: map,
            moments: BTreeMap::new(),
            step: 0,
        })
    }
}
