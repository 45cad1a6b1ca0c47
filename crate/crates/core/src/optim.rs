//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};
use crate::tensor::Tensor;

struct Slot<R: Real> {
    m: Vec<R>,
    v: Vec<R>,
}

/// Adam state for one parameter group. Slots are allocated on the first
/// step and must keep the same parameter order and shapes afterwards.
pub struct Adam<R: Real> {
    pub lr: R,
    beta1: R,
    beta2: R,
    eps: R,
    t: u64,
    slots: Vec<Slot<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(lr: R) -> Self {
        Adam {
            lr,
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
            t: 0,
            slots: Vec::new(),
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter in the group. `params` and
    /// `grads` are parallel slices in a stable order across calls.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<R>)],
        grads: &[Tensor<R>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Config(format!(
                "optimizer got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|(_, p)| Slot {
                    m: vec![R::zero(); p.numel()],
                    v: vec![R::zero(); p.numel()],
                })
                .collect();
        } else if self.slots.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer state holds {} parameters, step got {}",
                self.slots.len(),
                params.len()
            )));
        }

        // Validate the whole group before touching any parameter, so a bad
        // gradient leaves the previous (good) parameters intact.
        for ((name, param), grad) in params.iter().zip(grads) {
            if param.numel() != grad.numel() {
                return Err(Error::shape(
                    "adam step",
                    format!("{:?} for {name}", param.shape()),
                    format!("{:?}", grad.shape()),
                ));
            }
            if !grad.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {name} is not finite (step {})",
                    self.t + 1
                )));
            }
        }

        self.t += 1;
        let bc1 = R::one() - self.beta1.powi(self.t as i32);
        let bc2 = R::one() - self.beta2.powi(self.t as i32);

        for ((_, param), (grad, slot)) in params
            .iter_mut()
            .zip(grads.iter().zip(self.slots.iter_mut()))
        {
            for i in 0..param.numel() {
                let g = grad.data()[i];
                slot.m[i] = self.beta1 * slot.m[i] + (R::one() - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (R::one() - self.beta2) * g * g;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                param.data_mut()[i] =
                    param.data()[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Multiply the learning rate by `factor` (used by the optional decay
    /// schedule).
    pub fn scale_lr(&mut self, factor: f64) {
        self.lr = self.lr * real(factor);
    }
}

impl<R: Real> std::fmt::Debug for Adam<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adam")
            .field("lr", &to_f64(self.lr))
            .field("t", &self.t)
            .field("params", &self.slots.len())
            .finish()
    }
}
