//! Distillation losses: temperature-scaled logit matching, the stage-2
//! blend, feature (hint) matching through a learned linear map, mutual
//! (two-way online) distillation, and the single-loop combined objective
//! with a distillation-free warm-up.
//!
//! All losses are mean-reduced over the batch, so their scale is invariant
//! to batch size. Teacher-side inputs never receive gradients.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Temperature/blend knobs for distillation training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDConfig {
    /// Softmax temperature; higher is softer.
    pub temperature: f64,
    /// Weight of the distillation term against cross-entropy.
    pub alpha: f64,
}

impl Default for KDConfig {
    fn default() -> Self {
        KDConfig { temperature: 1.0, alpha: 0.5 }
    }
}

impl KDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Mean KL divergence between the softmax distributions of two logit
/// batches; the first argument is the teacher and receives no gradient.
pub fn kl_divergence<T: Real>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
) -> Result<Tensor<T>> {
    Tensor::kl_divergence(teacher_logits, student_logits)
}

/// Temperature-scaled distillation loss: `T² · KL(teacher/T ‖ student/T)`.
/// The `T²` factor keeps gradient magnitudes comparable across temperatures.
/// At `T = 1` this is bit-identical to [`kl_divergence`].
pub fn kd_loss<T: Real>(
    teacher_logits: &Tensor<T>,
    student_logits: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let inv = 1.0 / temperature;
    let kl = Tensor::kl_divergence(&teacher_logits.scale(inv), &student_logits.scale(inv))?;
    Ok(kl.scale(temperature * temperature))
}

/// Stage-2 objective: `α·KD + (1−α)·CE`.
pub fn stage2_loss<T: Real>(kd: &Tensor<T>, ce_tiny: &Tensor<T>, alpha: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    kd.scale(alpha).add(&ce_tiny.scale(1.0 - alpha))
}

/// Learned linear map from the student's feature width to the teacher's,
/// for hint (feature) distillation.
pub struct HintMap<T: Real = f32> {
    pub weight: Tensor<T>,
}

impl<T: Real> HintMap<T> {
    /// Random map (He-normal over the student width).
    pub fn new(student_width: usize, teacher_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / student_width as f64).sqrt();
        HintMap {
            weight: Tensor::randn(&[student_width, teacher_width], std, rng),
        }
    }

    /// Identity map; requires equal widths. Useful as a neutral starting
    /// point when student and teacher features are the same width.
    pub fn identity(width: usize) -> Result<Self> {
        let mut data = vec![T::ZERO; width * width];
        for i in 0..width {
            data[i * width + i] = T::ONE;
        }
        Ok(HintMap { weight: Tensor::leaf(&[width, width], data)? })
    }

    pub fn from_weight(weight: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "hint map weight must be rank 2, got {:?}",
                weight.shape()
            )));
        }
        Ok(HintMap { weight })
    }
}

/// Feature distillation: `½ · mean((teacher_feat − student_feat·W)²)`.
///
/// Gradients reach the student features and the map weight; the teacher
/// features are treated as constants.
pub fn hint_loss<T: Real>(
    teacher_feat: &Tensor<T>,
    student_feat: &Tensor<T>,
    map: &HintMap<T>,
) -> Result<Tensor<T>> {
    if map.weight.shape()[1] != teacher_feat.shape().last().copied().unwrap_or(0) {
        return Err(Error::Dimension(format!(
            "hint map produces width {}, teacher features have width {:?}",
            map.weight.shape()[1],
            teacher_feat.shape().last()
        )));
    }
    let mapped = student_feat.matmul(&map.weight)?;
    let diff = teacher_feat.detach().sub(&mapped)?;
    Ok(diff.mul(&diff)?.mean_all()?.scale(0.5))
}

/// Two-way online distillation: each network distills from the other's
/// (constant) predictions. Returns `(loss_for_tiny, loss_for_aug)` — the KD
/// terms each side adds to its own cross-entropy.
pub fn mutual_losses<T: Real>(
    tiny_logits: &Tensor<T>,
    aug_logits: &Tensor<T>,
    temperature: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let for_tiny = kd_loss(aug_logits, tiny_logits, temperature)?;
    let for_aug = kd_loss(tiny_logits, aug_logits, temperature)?;
    Ok((for_tiny, for_aug))
}

/// Single-loop combined objective:
/// `α·KD + (1−α)·(β·CE_tiny + (1−β)·CE_aug)`, with α forced to zero while
/// `epoch < warmup_epochs` (distillation-free warm-up).
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_loss<T: Real>(
    kd: &Tensor<T>,
    ce_tiny: &Tensor<T>,
    ce_aug: &Tensor<T>,
    alpha: f64,
    beta: f64,
    epoch: u32,
    warmup_epochs: u32,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1], got {beta}")));
    }
    let alpha = if epoch < warmup_epochs { 0.0 } else { alpha };
    let inner = ce_tiny.scale(beta).add(&ce_aug.scale(1.0 - beta))?;
    kd.scale(alpha).add(&inner.scale(1.0 - alpha))
}
