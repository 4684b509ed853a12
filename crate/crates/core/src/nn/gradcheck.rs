//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Parameters with more entries than this are checked on a random subsample.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares the gradients currently stored in `model` against central
/// differences of `loss`. Parameter values are restored afterwards.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&M) -> f64,
{
    let first = loss(model);
    let second = loss(model);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let plan: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| {
            let coords: Vec<usize> = if opts.max_coords_per_param > 0 && p.len() > opts.max_coords_per_param {
                let mut c = sample(&mut rng, p.len(), opts.max_coords_per_param).into_vec();
                c.sort_unstable();
                c
            } else {
                (0..p.len()).collect()
            };
            (p.name.clone(), coords, p.grad.clone())
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
        tolerance: opts.tolerance,
        passed: true,
    };
    let h = opts.step;
    for (pi, (name, coords, grads)) in plan.iter().enumerate() {
        for &j in coords {
            let orig = model.params()[pi].value[j];
            model.params_mut()[pi].value[j] = orig + h;
            let plus = loss(model);
            model.params_mut()[pi].value[j] = orig - h;
            let minus = loss(model);
            model.params_mut()[pi].value[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads[j], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_index = j;
                report.analytic = grads[j];
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err < opts.tolerance;
    Ok(report)
}
