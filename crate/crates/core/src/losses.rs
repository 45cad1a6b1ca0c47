//! Training objectives, composed as tape nodes.
//!
//! All pose losses operate on normalized flattened batches (B×2J or B×3J).
//! `loss_est` and `loss_rec` average the per-sample Euclidean norm of the
//! error; the perceptual loss is a mean absolute difference between latent
//! features; the adversarial pieces are binary cross-entropy on raw
//! discriminator logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::scalar::{real, to_f64, Real};

/// Weights λ₁..λ₅ on the five objective terms: pose estimation,
/// labeled perceptual alignment, reconstruction, unlabeled adversarial,
/// unlabeled perceptual alignment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub estimation: f64,
    pub perceptual: f64,
    pub reconstruction: f64,
    pub adversarial: f64,
    pub perceptual_unlabeled: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            estimation: 10.0,
            perceptual: 1.0,
            reconstruction: 1.0,
            adversarial: 0.1,
            perceptual_unlabeled: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("estimation", self.estimation),
            ("perceptual", self.perceptual),
            ("reconstruction", self.reconstruction),
            ("adversarial", self.adversarial),
            ("perceptual_unlabeled", self.perceptual_unlabeled),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// True when the unlabeled terms are switched off entirely, in which
    /// case semi-supervised training degenerates to supervised training.
    pub fn unlabeled_inactive(&self) -> bool {
        self.adversarial == 0.0 && self.perceptual_unlabeled == 0.0
    }
}

/// Scalar values of each term for one step, in objective units
/// (unweighted), plus the weighted total that was optimized.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub est: f64,
    pub perceptual_labeled: f64,
    pub rec: f64,
    pub disc_unlabeled: f64,
    pub perceptual_unlabeled: f64,
    pub total: f64,
}

/// Mean per-sample Euclidean distance between predicted and target pose
/// batches (B×3J).
pub fn loss_est<R: Real>(tape: &mut Tape<R>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    tape.euclid_loss(pred, target)
}

/// Reconstruction loss: both decoded features should land back on the
/// ground-truth 3D pose. Sum of the two mean per-sample distances.
pub fn loss_rec<R: Real>(
    tape: &mut Tape<R>,
    decoded_h3d: NodeId,
    decoded_f2d: NodeId,
    target: NodeId,
) -> Result<NodeId> {
    let a = tape.euclid_loss(decoded_h3d, target)?;
    let b = tape.euclid_loss(decoded_f2d, target)?;
    tape.weighted_sum(&[(a, R::one()), (b, R::one())])
}

/// Perceptual alignment: mean absolute difference between the 2D-path and
/// 3D-path latent features (B×w).
pub fn loss_perceptual<R: Real>(tape: &mut Tape<R>, f2d: NodeId, h3d: NodeId) -> Result<NodeId> {
    tape.l1_loss(f2d, h3d)
}

/// Discriminator objective: real (3D-path) features score 1, fake
/// (2D-path) features score 0.
pub fn loss_discriminator<R: Real>(
    tape: &mut Tape<R>,
    real_logits: NodeId,
    fake_logits: NodeId,
) -> Result<NodeId> {
    let n_real = tape.value(real_logits).numel();
    let n_fake = tape.value(fake_logits).numel();
    let ones = vec![R::one(); n_real];
    let zeros = vec![R::zero(); n_fake];
    let a = tape.bce_with_logit(real_logits, &ones)?;
    let b = tape.bce_with_logit(fake_logits, &zeros)?;
    tape.weighted_sum(&[(a, R::one()), (b, R::one())])
}

/// Non-saturating generator-side adversarial term: push the 2D-path
/// features toward the discriminator's "real" label.
pub fn loss_adversarial<R: Real>(tape: &mut Tape<R>, fake_logits: NodeId) -> Result<NodeId> {
    let ones = vec![R::one(); tape.value(fake_logits).numel()];
    tape.bce_with_logit(fake_logits, &ones)
}

/// Fully supervised objective:
/// λ₁·est + λ₂·perceptual + λ₃·reconstruction.
pub fn total_supervised<R: Real>(
    tape: &mut Tape<R>,
    weights: &LossWeights,
    est: NodeId,
    perceptual: NodeId,
    rec: NodeId,
) -> Result<NodeId> {
    weights.validate()?;
    tape.weighted_sum(&[
        (est, real::<R>(weights.estimation)),
        (perceptual, real::<R>(weights.perceptual)),
        (rec, real::<R>(weights.reconstruction)),
    ])
}

/// Semi-supervised objective: the supervised terms plus
/// λ₄·adversarial + λ₅·perceptual on the unlabeled batch.
#[allow(clippy::too_many_arguments)]
pub fn total_semi<R: Real>(
    tape: &mut Tape<R>,
    weights: &LossWeights,
    est: NodeId,
    perceptual: NodeId,
    rec: NodeId,
    adversarial_unlabeled: NodeId,
    perceptual_unlabeled: NodeId,
) -> Result<NodeId> {
    weights.validate()?;
    tape.weighted_sum(&[
        (est, real::<R>(weights.estimation)),
        (perceptual, real::<R>(weights.perceptual)),
        (rec, real::<R>(weights.reconstruction)),
        (adversarial_unlabeled, real::<R>(weights.adversarial)),
        (perceptual_unlabeled, real::<R>(weights.perceptual_unlabeled)),
    ])
}

/// Collect scalar term values into a [`LossBreakdown`]. Pass `None` for
/// terms that were not part of this step (they record as 0).
pub fn breakdown<R: Real>(
    tape: &Tape<R>,
    est: NodeId,
    perceptual: NodeId,
    rec: NodeId,
    adversarial_unlabeled: Option<NodeId>,
    perceptual_unlabeled: Option<NodeId>,
    total: NodeId,
) -> LossBreakdown {
    let v = |id: NodeId| to_f64(tape.value(id).item());
    LossBreakdown {
        est: v(est),
        perceptual_labeled: v(perceptual),
        rec: v(rec),
        disc_unlabeled: adversarial_unlabeled.map(v).unwrap_or(0.0),
        perceptual_unlabeled: perceptual_unlabeled.map(v).unwrap_or(0.0),
        total: v(total),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_leaf(tape: &mut Tape<f64>, v: f64) -> NodeId {
        tape.leaf(Tensor::scalar(v))
    }

    #[test]
    fn estimation_loss_is_mean_euclidean_norm() {
        let mut tape: Tape<f64> = Tape::new();
        // rows: (3,4) → 5 and (0,0) → 0, mean 2.5
        let pred = tape.leaf(Tensor::new(vec![2, 2], vec![3.0, 4.0, 0.0, 0.0]));
        let target = tape.leaf(Tensor::zeros(vec![2, 2]));
        let l = loss_est(&mut tape, pred, target).unwrap();
        assert!((tape.value(l).item() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_loss_sums_both_paths() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0])); // norm 5
        let b = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 2.0])); // norm 2
        let target = tape.leaf(Tensor::zeros(vec![1, 2]));
        let l = loss_rec(&mut tape, a, b, target).unwrap();
        assert!((tape.value(l).item() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn perceptual_loss_hand_value() {
        let mut tape: Tape<f64> = Tape::new();
        let f = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, -1.0]));
        let h = tape.leaf(Tensor::zeros(vec![1, 2]));
        let l = loss_perceptual(&mut tape, f, h).unwrap();
        assert!((tape.value(l).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn discriminator_loss_at_zero_logits_is_two_ln_two() {
        let mut tape: Tape<f64> = Tape::new();
        let real_logits = tape.leaf(Tensor::new(vec![3, 1], vec![0.0; 3]));
        let fake_logits = tape.leaf(Tensor::new(vec![3, 1], vec![0.0; 3]));
        let l = loss_discriminator(&mut tape, real_logits, fake_logits).unwrap();
        let expect = 2.0 * std::f64::consts::LN_2;
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_is_near_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let real_logits = tape.leaf(Tensor::new(vec![2, 1], vec![20.0, 20.0]));
        let fake_logits = tape.leaf(Tensor::new(vec![2, 1], vec![-20.0, -20.0]));
        let l = loss_discriminator(&mut tape, real_logits, fake_logits).unwrap();
        assert!(tape.value(l).item() < 1e-8);
    }

    #[test]
    fn adversarial_loss_at_zero_logit_is_ln_two() {
        let mut tape: Tape<f64> = Tape::new();
        let fake_logits = tape.leaf(Tensor::new(vec![1, 1], vec![0.0]));
        let l = loss_adversarial(&mut tape, fake_logits).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn supervised_total_hand_value() {
        let mut tape: Tape<f64> = Tape::new();
        let est = scalar_leaf(&mut tape, 1.0);
        let perc = scalar_leaf(&mut tape, 2.0);
        let rec = scalar_leaf(&mut tape, 3.0);
        let w = LossWeights {
            estimation: 10.0,
            perceptual: 1.0,
            reconstruction: 1.0,
            ..Default::default()
        };
        let total = total_supervised(&mut tape, &w, est, perc, rec).unwrap();
        assert!((tape.value(total).item() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn semi_total_with_default_weights() {
        let mut tape: Tape<f64> = Tape::new();
        let ids: Vec<NodeId> = (0..5).map(|_| scalar_leaf(&mut tape, 1.0)).collect();
        let total = total_semi(
            &mut tape,
            &LossWeights::default(),
            ids[0],
            ids[1],
            ids[2],
            ids[3],
            ids[4],
        )
        .unwrap();
        // 10 + 1 + 1 + 0.1 + 0.5
        assert!((tape.value(total).item() - 12.6).abs() < 1e-12);
    }

    #[test]
    fn totals_are_linear_in_each_weight() {
        let base = LossWeights::default();
        let terms = [0.7, 1.3, 0.2, 0.9, 0.4];
        let eval = |w: &LossWeights| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let ids: Vec<NodeId> = terms.iter().map(|&v| scalar_leaf(&mut tape, v)).collect();
            let total =
                total_semi(&mut tape, w, ids[0], ids[1], ids[2], ids[3], ids[4]).unwrap();
            tape.value(total).item()
        };
        let v0 = eval(&base);
        let mut bumped = base;
        bumped.adversarial += 2.0;
        let v1 = eval(&bumped);
        assert!((v1 - v0 - 2.0 * terms[3]).abs() < 1e-12);
        let mut bumped = base;
        bumped.estimation += 0.5;
        let v2 = eval(&bumped);
        assert!((v2 - v0 - 0.5 * terms[0]).abs() < 1e-12);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            reconstruction: -0.1,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let mut tape: Tape<f64> = Tape::new();
        let s = scalar_leaf(&mut tape, 1.0);
        assert!(total_supervised(&mut tape, &w, s, s, s).is_err());
    }

    #[test]
    fn unlabeled_inactive_detection() {
        assert!(!LossWeights::default().unlabeled_inactive());
        let off = LossWeights {
            adversarial: 0.0,
            perceptual_unlabeled: 0.0,
            ..Default::default()
        };
        assert!(off.unlabeled_inactive());
    }

    #[test]
    fn gradients_flow_through_the_combined_objective() {
        // d(total)/d(pred) for λ₁·est with est the mean Euclidean norm:
        // single row (3,4): d/dpred = λ₁ · (pred−t)/‖pred−t‖ = 10·(0.6, 0.8)
        let mut tape: Tape<f64> = Tape::new();
        let pred = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]));
        let target = tape.leaf(Tensor::zeros(vec![1, 2]));
        let est = loss_est(&mut tape, pred, target).unwrap();
        let perc = scalar_leaf(&mut tape, 0.0);
        let rec = scalar_leaf(&mut tape, 0.0);
        let total =
            total_supervised(&mut tape, &LossWeights::default(), est, perc, rec).unwrap();
        let g = tape.backward(total).wrt(pred, &tape);
        assert!((g.data()[0] - 6.0).abs() < 1e-12);
        assert!((g.data()[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn breakdown_records_absent_terms_as_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let est = scalar_leaf(&mut tape, 1.5);
        let perc = scalar_leaf(&mut tape, 0.25);
        let rec = scalar_leaf(&mut tape, 2.0);
        let total =
            total_supervised(&mut tape, &LossWeights::default(), est, perc, rec).unwrap();
        let b = breakdown(&tape, est, perc, rec, None, None, total);
        assert_eq!(b.disc_unlabeled, 0.0);
        assert_eq!(b.perceptual_unlabeled, 0.0);
        assert!((b.total - (15.0 + 0.25 + 2.0)).abs() < 1e-12);
        assert_eq!(b.est, 1.5);
    }
}
