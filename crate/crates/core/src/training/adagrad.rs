use crate::autodiff::{GradientMap, ParamSet};
use crate::error::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Per-parameter running sums of squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    accum: ParamSet,
}

impl OptimizerState {
    /// Zero accumulators shaped like `params`.
    pub fn new(params: &ParamSet) -> Self {
        OptimizerState {
            accum: params.zeros_like(),
        }
    }

    pub fn accumulators(&self) -> &ParamSet {
        &self.accum
    }
}

/// `acc += g²; p −= lr · g / (√acc + 1e-8)`, elementwise.
pub fn adagrad_step(
    params: &mut ParamSet,
    grads: &GradientMap,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    params.check_aligned(grads)?;
    state.accum.check_aligned(grads)?;
    if !(lr > 0.0) {
        return Err(Error::usage(format!("learning rate must be positive, got {lr}")));
    }
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("aligned");
        let acc = state.accum.get_mut(name).expect("aligned");
        for ((p, a), &g) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
        }
    }
    Ok(())
}
