use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, AdamW, LinearParams, ParamStore, Tape};

/// Fully-connected ReLU network with one output logit.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<LinearParams>,
    pub params: ParamStore,
    pub input_dim: usize,
}

const BATCH: usize = 32;

impl Mlp {
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            if h == 0 {
                return Err(Error::config("hidden layer sizes must be positive"));
            }
            layers.push(LinearParams::init(&mut params, &format!("mlp.{i}"), fan_in, h, &mut rng)?);
            fan_in = h;
        }
        Ok(Mlp {
            layers,
            params,
            input_dim,
        })
    }

    fn forward(&self, tape: &mut Tape, params: &ParamStore, x: &[Vec<f64>]) -> Result<crate::numeric::Var> {
        let data: Vec<f64> = x.iter().flatten().copied().collect();
        let mut h = tape.constant(x.len(), self.input_dim, data)?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.forward(&mut tape, &self.params, x)?;
        Ok(tape.value(z).to_vec())
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<u8>> {
        Ok(self
            .logits(x)?
            .into_iter()
            .map(|z| u8::from(sigmoid(z) >= 0.5))
            .collect())
    }
}

/// Mini-batch (32) AdamW on mean BCE at a constant learning rate.
pub fn mlp_train(x: &[Vec<f64>], y: &[u8], hidden: &[usize], lr: f64, epochs: usize, seed: u64) -> Result<Mlp> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data("MLP needs matching non-empty data"));
    }
    let ones = y.iter().filter(|&&l| l != 0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::data("MLP training set contains a single class"));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::data("MLP rows have differing lengths"));
    }
    let mut mlp = Mlp::init(dim, hidden, seed)?;
    let opt = AdamW::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(BATCH) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| f64::from(y[i])).collect();
            let mut params = std::mem::take(&mut mlp.params);
            params.zero_grad();
            let mut tape = Tape::new();
            let z = mlp.forward(&mut tape, &params, &bx)?;
            let loss = tape.bce_with_logits(z, &by)?;
            tape.backward_into(loss, &mut params)?;
            opt.step(&mut params, lr)?;
            mlp.params = params;
        }
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;

    fn separable() -> (Vec<Vec<f64>>, Vec<u8>) {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| if i % 2 == 0 { vec![3.0, 0.0, 1.0] } else { vec![0.0, 3.0, 1.0] })
            .collect();
        let y = (0..40).map(|i| (i % 2) as u8).collect();
        (x, y)
    }

    #[test]
    fn learns_separable_counts() {
        let (x, y) = separable();
        let m = mlp_train(&x, &y, &[8], 1e-2, 50, 3).unwrap();
        let r = MetricsReport::evaluate(&m.predict(&x).unwrap(), &y).unwrap();
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn zero_lr_and_determinism() {
        let (x, y) = separable();
        let fresh = Mlp::init(3, &[4, 4], 9).unwrap();
        let m = mlp_train(&x, &y, &[4, 4], 0.0, 5, 9).unwrap();
        assert_eq!(m.params.to_map(), fresh.params.to_map());
        let a = mlp_train(&x, &y, &[4], 1e-2, 5, 9).unwrap();
        let b = mlp_train(&x, &y, &[4], 1e-2, 5, 9).unwrap();
        assert_eq!(a.params.to_map(), b.params.to_map());
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(mlp_train(&x, &[1, 1], &[2], 1e-2, 1, 0).is_err());
    }
}
