//! Central finite-difference check of the analytic gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, TinyLmError, TokenId};

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub index: usize,
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Denominator floor so that two near-zero gradients do not blow up the
/// relative error.
const REL_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` (a full flat gradient) against central differences
/// on `n_samples` randomly chosen parameters.
pub fn compare_gradients(
    model: &Model<f64>,
    batch: &[&[TokenId]],
    analytic: &[f64],
    n_samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, TinyLmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, model.params.len(), n_samples.min(model.params.len())).into_vec();
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(picks.len());
    for index in picks {
        let orig = probe.params[index];
        probe.params[index] = orig + eps;
        let up = probe.loss(batch)?;
        probe.params[index] = orig - eps;
        let down = probe.loss(batch)?;
        probe.params[index] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[index];
        samples.push(GradSample {
            index,
            name: model.layout.owner(index).map(|e| e.name.clone()).unwrap_or_default(),
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { samples, max_rel_error })
}

/// Backprop vs finite differences on one batch.
pub fn grad_check(
    model: &Model<f64>,
    batch: &[&[TokenId]],
    n_samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, TinyLmError> {
    let (_, grad) = model.loss_and_grad(batch)?;
    compare_gradients(model, batch, &grad, n_samples, eps, seed)
}
