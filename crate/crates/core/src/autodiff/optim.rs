use std::collections::BTreeMap;

use crate::autodiff::store::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stochastic gradient descent with heavy-ball momentum.
///
/// `v <- momentum * v + g`, then `theta <- theta - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    learning_rate: S,
    momentum: S,
    max_grad_norm: Option<S>,
    velocity: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(learning_rate: S, momentum: S) -> Result<Self> {
        if !(learning_rate >= S::zero()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0, got {learning_rate}"
            )));
        }
        if !(momentum >= S::zero() && momentum < S::one()) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Sgd {
            learning_rate,
            momentum,
            max_grad_norm: None,
            velocity: BTreeMap::new(),
        })
    }

    /// Rescales the whole gradient when its global L2 norm exceeds `limit`.
    pub fn with_max_grad_norm(mut self, limit: Option<S>) -> Self {
        self.max_grad_norm = limit;
        self
    }

    pub fn step(
        &mut self,
        store: &mut ParameterStore<S>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = store.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("sgd_step", p.shape(), g.shape()));
            }
        }
        let clip = match self.max_grad_norm {
            Some(limit) => {
                let norm = grads
                    .values()
                    .flat_map(|g| g.data().iter())
                    .map(|&x| x * x)
                    .sum::<S>()
                    .sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    S::one()
                }
            }
            None => S::one(),
        };
        for (name, g) in grads {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![S::zero(); g.numel()]);
            let p = store.get_mut(name)?;
            for ((theta, vel), &gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vel = self.momentum * *vel + gv * clip;
                *theta -= self.learning_rate * *vel;
            }
        }
        Ok(())
    }
}
