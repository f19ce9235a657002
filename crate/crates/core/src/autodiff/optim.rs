use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Sign of an optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// RMSProp hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            decay: 0.9,
            eps: 1e-8,
        }
    }
}

/// Running mean of squared gradients, one buffer per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RmsPropState {
    accum: BTreeMap<String, Vec<f64>>,
}

impl RmsPropState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero-initialised accumulators shaped like `params`.
    pub fn for_store(params: &ParamStore) -> Self {
        Self {
            accum: params
                .iter()
                .map(|(n, t)| (n.clone(), vec![0.0; t.numel()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.accum.get(name).map(Vec::as_slice)
    }
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Result<Self> {
        // lr = 0 is allowed: it is the null update used to check bookkeeping.
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be >= 0")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!("decay {decay} must lie in (0, 1)")));
        }
        if eps < 0.0 {
            return Err(Error::InvalidArgument(format!("eps {eps} must be >= 0")));
        }
        Ok(Self { lr, decay, eps })
    }

    /// One update from the gradient buffers held in `params`.
    ///
    /// `v <- decay*v + (1-decay)*g^2`, then `theta <- theta -/+ lr*g/(sqrt(v)+eps)`.
    pub fn step(
        &self,
        params: &mut ParamStore,
        state: &mut RmsPropState,
        direction: Direction,
    ) -> Result<()> {
        let sign = match direction {
            Direction::Descend => -1.0,
            Direction::Ascend => 1.0,
        };
        // Validate first so a missing gradient leaves everything untouched.
        for (name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::MissingGradient(name.clone()));
            }
            if let Some(v) = state.accum.get(name) {
                if v.len() != t.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "rmsprop state",
                        lhs: t.shape().to_vec(),
                        rhs: vec![v.len()],
                    });
                }
            }
        }
        for (name, t) in params.iter_mut() {
            let n = t.numel();
            let v = state.accum.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = t.grad().expect("checked above").to_vec();
            for ((theta, acc), gi) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *acc = self.decay * *acc + (1.0 - self.decay) * gi * gi;
                let denom = acc.sqrt() + self.eps;
                if denom > 0.0 {
                    *theta += sign * self.lr * gi / denom;
                }
            }
        }
        Ok(())
    }
}
