use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::GradientMap;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Outcome of a central-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub tensors_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences `(f(p+ε) − f(p−ε)) / 2ε`.
///
/// Tensors with more than their share of `max_coords` are subsampled; every
/// tensor contributes at least one coordinate. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    params: &ParamSet,
    eps: f64,
    max_coords: usize,
    seed: u64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, GradientMap)>,
{
    if !(eps > 0.0) {
        return Err(Error::usage(format!("epsilon must be positive, got {eps}")));
    }
    let (first, grads) = loss_fn(params)?;
    let (second, _) = loss_fn(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    params.check_aligned(&grads)?;

    let per_tensor = max_coords.div_ceil(params.len().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        tensors_checked: 0,
        worst: None,
    };

    for (name, tensor) in params.iter() {
        let analytic = grads.get(name).expect("aligned above");
        let coords: Vec<usize> = if tensor.len() <= per_tensor {
            (0..tensor.len()).collect()
        } else {
            let mut picked = sample(&mut rng, tensor.len(), per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };
        for k in coords {
            let original = tensor.data()[k];
            probe.get_mut(name).expect("cloned").data_mut()[k] = original + eps;
            let plus = loss_fn(&probe)?.0;
            probe.get_mut(name).expect("cloned").data_mut()[k] = original - eps;
            let minus = loss_fn(&probe)?.0;
            probe.get_mut(name).expect("cloned").data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
            }
            report.coords_checked += 1;
        }
        report.tensors_checked += 1;
    }
    Ok(report)
}
