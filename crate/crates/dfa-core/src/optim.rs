//! Stochastic gradient descent with classical momentum.

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{name}`; step aborted")]
    NonFiniteGradient { name: String },
    #[error("optimizer tracks {expected} parameters, step received {got}")]
    ParameterCountMismatch { expected: usize, got: usize },
}

/// Momentum SGD: `v <- m*v + g`, `theta <- theta - lr*v`.
///
/// With constant gradients and `m = 0.9` the second update is 1.9x the
/// first, which the tests pin as the momentum recurrence oracle.
pub struct SgdMomentum {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64, params: &[Tensor]) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0, 1)");
        Self {
            learning_rate,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Applies one update in place. A non-finite gradient anywhere aborts the
    /// whole step (no partial writes) and reports the offending parameter.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<(), OptimError> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(OptimError::ParameterCountMismatch {
                expected: self.velocity.len(),
                got: grads.len(),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(OptimError::NonFiniteGradient {
                    name: names
                        .get(i)
                        .cloned()
                        .unwrap_or_else(|| format!("param[{i}]")),
                });
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let vd = v.data_mut();
            let pd = p.data_mut();
            for i in 0..vd.len() {
                vd[i] = self.momentum * vd[i] + g.data()[i];
                pd[i] -= self.learning_rate * vd[i];
            }
        }
        Ok(())
    }
}
