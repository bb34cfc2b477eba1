//! Additive position and time encodings.
//!
//! * `positional`: the sinusoidal table evaluated at token indices.
//! * `rtee`: the same table evaluated at seconds elapsed since the first
//!   event of the sequence (special tokens use −1). Not trainable.
//! * `time2vec`: one linear and `k` sine components with trainable
//!   frequencies and phases.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel time value for `<AGG>`, `<EOS>` and `<PAD>`.
pub const SPECIAL_ELAPSED: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    #[default]
    None,
    Positional,
    Rtee,
    Time2vec,
}

impl EncodingMode {
    pub fn name(self) -> &'static str {
        match self {
            EncodingMode::None => "none",
            EncodingMode::Positional => "positional",
            EncodingMode::Rtee => "rtee",
            EncodingMode::Time2vec => "time2vec",
        }
    }

    pub fn uses_time(self) -> bool {
        matches!(self, EncodingMode::Rtee | EncodingMode::Time2vec)
    }
}

impl std::str::FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EncodingMode::None),
            "positional" => Ok(EncodingMode::Positional),
            "rtee" => Ok(EncodingMode::Rtee),
            "time2vec" => Ok(EncodingMode::Time2vec),
            other => Err(Error::config(format!(
                "unknown encoding `{other}` (expected none|positional|rtee|time2vec)"
            ))),
        }
    }
}

/// How elapsed seconds are transformed before encoding. Special-token
/// sentinels are never transformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElapsedScaling {
    #[default]
    Raw,
    Log1p,
}

impl ElapsedScaling {
    pub fn apply(self, elapsed: f64) -> f64 {
        match self {
            ElapsedScaling::Raw => elapsed,
            ElapsedScaling::Log1p if elapsed >= 0.0 => elapsed.ln_1p(),
            ElapsedScaling::Log1p => elapsed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidalParams {
    pub d_model: usize,
    pub base: f64,
}

impl SinusoidalParams {
    pub fn new(d_model: usize) -> Result<Self> {
        if d_model == 0 || d_model % 2 != 0 {
            return Err(Error::config(format!(
                "sinusoidal encoding needs an even positive width, got {d_model}"
            )));
        }
        Ok(SinusoidalParams {
            d_model,
            base: 10_000.0,
        })
    }
}

/// `out[p][2i] = sin(v_p / base^(2i/d))`, `out[p][2i+1] = cos(v_p / base^(2i/d))`.
pub fn sinusoidal_encode(values: &[f64], params: &SinusoidalParams) -> Vec<f64> {
    let d = params.d_model;
    let divisors: Vec<f64> = (0..d / 2)
        .map(|i| params.base.powf((2 * i) as f64 / d as f64))
        .collect();
    let mut out = vec![0.0; values.len() * d];
    for (row, &v) in out.chunks_mut(d).zip(values) {
        for (i, div) in divisors.iter().enumerate() {
            let arg = v / div;
            row[2 * i] = arg.sin();
            row[2 * i + 1] = arg.cos();
        }
    }
    out
}

/// Relative time elapse encoding: the sinusoidal table at elapsed seconds.
pub fn rtee_encode(elapsed: &[f64], params: &SinusoidalParams) -> Vec<f64> {
    sinusoidal_encode(elapsed, params)
}

/// Trainable Time2Vec frequencies and phases, each of length `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Time2VecParams {
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Time2VecParams {
    /// `ω ~ U(−1, 1) / time_scale`, `φ ~ U(−π, π)`.
    pub fn init<R: Rng>(dim: usize, time_scale: f64, rng: &mut R) -> Self {
        let scale = if time_scale > 0.0 { time_scale } else { 1.0 };
        let omega = (0..dim).map(|_| rng.random_range(-1.0..1.0) / scale).collect();
        let phi = (0..dim).map(|_| rng.random_range(-PI..PI)).collect();
        Time2VecParams { omega, phi }
    }
}

pub fn time2vec_encode(tau: &[f64], params: &Time2VecParams) -> Result<Vec<f64>> {
    if params.omega.len() != params.phi.len() || params.omega.is_empty() {
        return Err(Error::Shape(format!(
            "time2vec has {} frequencies and {} phases",
            params.omega.len(),
            params.phi.len()
        )));
    }
    Ok(time2vec_values(tau, &params.omega, &params.phi))
}

pub(crate) fn time2vec_values(tau: &[f64], omega: &[f64], phi: &[f64]) -> Vec<f64> {
    let c = omega.len();
    let mut out = vec![0.0; tau.len() * c];
    for (row, &t) in out.chunks_mut(c).zip(tau) {
        row[0] = omega[0] * t + phi[0];
        for i in 1..c {
            row[i] = (omega[i] * t + phi[i]).sin();
        }
    }
    out
}

/// Median of the strictly positive values, used to scale Time2Vec frequencies.
pub fn median_positive(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| *x > 0.0).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, GradCheckConfig, ParamStore, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn value_zero_gives_sin_zero_cos_one() {
        let p = SinusoidalParams::new(6).unwrap();
        let row = sinusoidal_encode(&[0.0], &p);
        assert_eq!(row, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn value_one_first_pair() {
        let p = SinusoidalParams::new(4).unwrap();
        let row = sinusoidal_encode(&[1.0], &p);
        assert!((row[0] - 0.841471).abs() < 1e-6);
        assert!((row[1] - 0.540302).abs() < 1e-6);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(SinusoidalParams::new(5).is_err());
        assert!(SinusoidalParams::new(0).is_err());
    }

    #[test]
    fn equal_elapsed_rows_identical() {
        let p = SinusoidalParams::new(8).unwrap();
        let enc = rtee_encode(&[0.0, 1.0, 1.0, 2.0, 4.0, 5.0, 6.0], &p);
        assert_eq!(&enc[8..16], &enc[16..24]);
        assert_ne!(&enc[0..8], &enc[8..16]);
    }

    #[test]
    fn rtee_of_indices_is_positional() {
        let p = SinusoidalParams::new(16).unwrap();
        let idx: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(rtee_encode(&idx, &p), sinusoidal_encode(&idx, &p));
    }

    #[test]
    fn time2vec_examples() {
        let params = Time2VecParams {
            omega: vec![1.0, 2.0 * PI, 2.0 * PI],
            phi: vec![0.0, 0.0, 0.0],
        };
        let out = time2vec_encode(&[5.0], &params).unwrap();
        assert_eq!(out[0], 5.0);
        let out = time2vec_encode(&[1.0], &params).unwrap();
        assert!(out[1].abs() < 1e-12 && out[2].abs() < 1e-12);
        let zero = Time2VecParams {
            omega: vec![0.0; 4],
            phi: vec![0.0; 4],
        };
        assert!(time2vec_encode(&[3.5], &zero).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn time2vec_gradient_matches_central_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = Time2VecParams::init(5, 3.0, &mut rng);
            let tau: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..10.0)).collect();
            let row_w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let col_w: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut store = ParamStore::new();
            store.insert("omega", Tensor::new(vec![5], init.omega).unwrap()).unwrap();
            store.insert("phi", Tensor::new(vec![5], init.phi).unwrap()).unwrap();
            let report = grad_check(&mut store, &GradCheckConfig::default(), |s, with_grad| {
                // loss = row_wᵀ · T2V(τ) · col_w
                let mut t = Tape::new();
                let om = t.param(s, "omega")?;
                let ph = t.param(s, "phi")?;
                let enc = t.time2vec(&tau, om, ph)?;
                let cw = t.constant(5, 1, col_w.clone())?;
                let rw = t.constant(1, 4, row_w.clone())?;
                let proj = t.matmul(enc, cw)?;
                let loss = t.matmul(rw, proj)?;
                if with_grad {
                    t.backward_into(loss, s)?;
                }
                Ok(t.scalar(loss))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn median_of_positive_values() {
        assert_eq!(median_positive([0.0, 3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median_positive([0.0, 4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median_positive([0.0, -1.0]), None);
    }
}
