use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference probe size.
    pub eps: f64,
    /// Probe at most this many coordinates per parameter (all when `None`).
    pub max_coords_per_param: Option<usize>,
    /// Seed for choosing which coordinates to probe.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub probed: usize,
}

/// Compares analytic gradients against central differences.
///
/// `objective(store, with_grad)` returns the scalar loss; when `with_grad`
/// is true it must also accumulate gradients into `store`. The relative
/// error of a coordinate is `|a − n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    config: &GradCheckConfig,
    mut objective: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64>,
{
    store.zero_grad();
    let base = objective(store, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("objective value {base}")));
    }
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                t.grad.clone().unwrap_or_else(|| vec![0.0; t.numel()]),
            )
        })
        .collect();
    store.zero_grad();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        probed: 0,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = match config.max_coords_per_param {
            Some(cap) if cap < n => {
                let mut c = sample(&mut rng, n, cap).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = store.require(name)?.data[i];
            store.get_mut(name).expect("present").data[i] = orig + config.eps;
            let plus = objective(store, false)?;
            store.get_mut(name).expect("present").data[i] = orig - config.eps;
            let minus = objective(store, false)?;
            store.get_mut(name).expect("present").data[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective while probing `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = grad[i];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient `{name}`[{i}]")));
            }
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.probed += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
