use std::collections::HashMap;

use super::param::{Param, ParamId};
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum.
///
/// `v ← momentum·v + grad; p ← p − lr·v`. Velocity buffers are keyed by
/// parameter identity and created lazily on the first step.
#[derive(Clone, Debug)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: HashMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            velocity: HashMap::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self, param: &Param) -> Option<&[f64]> {
        self.velocity.get(&param.id()).map(Vec::as_slice)
    }

    /// Applies one update to every parameter in `params` and clears their
    /// gradients. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &[Param]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.get().grad().is_none()) {
            return Err(Error::Contract(format!(
                "parameter `{}` has no gradient at optimizer step",
                p.name()
            )));
        }
        for p in params {
            let mut t = p.get_mut();
            let grad = t.take_grad().expect("checked above");
            let v = self
                .velocity
                .entry(p.id())
                .or_insert_with(|| vec![0.0; grad.len()]);
            debug_assert_eq!(v.len(), grad.len());
            for (vi, gi) in v.iter_mut().zip(&grad) {
                *vi = self.momentum * *vi + gi;
            }
            if self.learning_rate == 0.0 {
                continue;
            }
            for (x, vi) in t.values_mut().iter_mut().zip(v.iter()) {
                *x -= self.learning_rate * vi;
            }
        }
        Ok(())
    }

    /// Drops all gradients without updating.
    pub fn zero_grad(params: &[Param]) {
        for p in params {
            p.get_mut().clear_grad();
        }
    }
}
