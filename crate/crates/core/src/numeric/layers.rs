use rand::Rng;

use super::tape::{AttentionLayout, Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Names of a `[in × out]` weight and `[out]` bias held in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: String,
    pub bias: String,
}

impl LinearParams {
    /// Registers a Glorot-initialised layer under `prefix.weight` / `prefix.bias`.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = LinearParams::named(prefix);
        store.insert(&p.weight, Tensor::xavier(fan_in, fan_out, rng))?;
        store.insert(&p.bias, Tensor::zeros(vec![fan_out]))?;
        Ok(p)
    }

    pub fn named(prefix: &str) -> Self {
        LinearParams {
            weight: format!("{prefix}.weight"),
            bias: format!("{prefix}.bias"),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.weight)?;
        let b = tape.param(store, &self.bias)?;
        tape.linear(x, w, b)
    }
}

/// Query, key, value and output projections of one attention sublayer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Result<Self> {
        Ok(AttentionParams {
            query: LinearParams::init(store, &format!("{prefix}.query"), d, d, rng)?,
            key: LinearParams::init(store, &format!("{prefix}.key"), d, d, rng)?,
            value: LinearParams::init(store, &format!("{prefix}.value"), d, d, rng)?,
            output: LinearParams::init(store, &format!("{prefix}.output"), d, d, rng)?,
        })
    }

    pub fn named(prefix: &str) -> Self {
        AttentionParams {
            query: LinearParams::named(&format!("{prefix}.query")),
            key: LinearParams::named(&format!("{prefix}.key")),
            value: LinearParams::named(&format!("{prefix}.value")),
            output: LinearParams::named(&format!("{prefix}.output")),
        }
    }

    /// Multi-head self-attention: project, attend per head with the
    /// padding mask, concatenate heads and apply the output projection.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        heads: usize,
        layout: &AttentionLayout,
    ) -> Result<Var> {
        let (_, d) = tape.shape(x);
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        let q = self.query.apply(tape, store, x)?;
        let k = self.key.apply(tape, store, x)?;
        let v = self.value.apply(tape, store, x)?;
        let attended = tape.attention(q, k, v, heads, layout)?;
        self.output.apply(tape, store, attended)
    }
}

/// Registers a layer-norm affine pair (`gamma` = 1, `beta` = 0).
pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<(String, String)> {
    let gamma = format!("{prefix}.gamma");
    let beta = format!("{prefix}.beta");
    store.insert(&gamma, Tensor::filled(vec![d], 1.0))?;
    store.insert(&beta, Tensor::zeros(vec![d]))?;
    Ok((gamma, beta))
}

pub fn apply_layer_norm(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    (gamma, beta): (&str, &str),
    eps: f64,
) -> Result<Var> {
    let g = tape.param(store, gamma)?;
    let b = tape.param(store, beta)?;
    tape.layer_norm(x, g, b, eps)
}
