//! Adam optimizer and step-decay learning-rate schedule.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "adam: lr must be positive and finite, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "adam: {name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam: eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Adam with bias correction. Parameters are immutable tensors, so a step
/// produces replacement leaves through the `&mut Tensor` slots.
///
/// Parameters whose gradient is absent (never touched by the last backward
/// pass) are skipped entirely: their moments and per-parameter step count do
/// not advance, so an untouched parameter is bit-identical after the step.
/// A parameter with an all-zero gradient and zero moments is likewise a
/// fixed point: the update is exactly zero.
pub struct Adam<T: Real = f32> {
    cfg: AdamConfig,
    /// First/second moment per parameter, lazily allocated on first step.
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    /// Per-parameter step counts (a parameter only steps when it has a grad).
    steps: Vec<u64>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update. `params` must be the same list, in the same order, every
    /// call; names are used in diagnostics.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor<T>)]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|(_, p)| vec![T::ZERO; p.numel()])
                .collect();
            self.v = self.m.clone();
            self.steps = vec![0u64; params.len()];
        }
        if self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: parameter list changed from {} to {} entries",
                self.m.len(),
                params.len()
            )));
        }

        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_m_b1 = T::ONE - b1;
        let one_m_b2 = T::ONE - b2;
        let eps = T::from_f64(self.cfg.eps);

        for (i, (name, slot)) in params.iter_mut().enumerate() {
            if self.m[i].len() != slot.numel() {
                return Err(Error::Contract(format!(
                    "adam: parameter '{name}' changed size from {} to {}",
                    self.m[i].len(),
                    slot.numel()
                )));
            }
            let Some(grad) = slot.grad() else {
                continue;
            };
            for (j, g) in grad.iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "adam: non-finite gradient {:?} in parameter '{name}' at element {j}",
                        g
                    )));
                }
            }

            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = T::from_f64(1.0 - self.cfg.beta1.powi(t));
            let bc2 = T::from_f64(1.0 - self.cfg.beta2.powi(t));
            let lr = T::from_f64(self.cfg.lr);

            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut data = slot.data().to_vec();
            for ((p, &g), (mj, vj)) in data
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mj = b1 * *mj + one_m_b1 * g;
                *vj = b2 * *vj + one_m_b2 * g * g;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
            **slot = Tensor::leaf(slot.shape(), data).expect("adam: shape preserved");
        }
        Ok(())
    }
}

/// Step-decay schedule: `lr(e) = base * decay^floor(e / step_epochs)`.
///
/// When the decay factor has a short decimal representation (0.7, 0.5, ...)
/// the power is evaluated as an exact integer ratio `num^k / 10^(d*k)` before
/// a single rounding to f64, so e.g. two decays of 0.7 yield exactly the f64
/// nearest 0.49 rather than `0.7 * 0.7` with compounded rounding.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    base_lr: f64,
    decay: f64,
    step_epochs: u32,
    /// decay == num / den with den a power of ten, when representable.
    decimal: Option<(u128, u128)>,
}

impl LrSchedule {
    pub fn new(base_lr: f64, decay: f64, step_epochs: u32) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "schedule: base lr must be positive and finite, got {base_lr}"
            )));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Config(format!(
                "schedule: decay must be in (0, 1], got {decay}"
            )));
        }
        if step_epochs == 0 {
            return Err(Error::Config(
                "schedule: step_epochs must be at least 1".to_string(),
            ));
        }
        Ok(LrSchedule {
            base_lr,
            decay,
            step_epochs,
            decimal: decimal_ratio(decay),
        })
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        let k = epoch / self.step_epochs;
        if k == 0 {
            return self.base_lr;
        }
        let factor = self
            .decimal
            .and_then(|(num, den)| {
                let n = num.checked_pow(k)?;
                let d = den.checked_pow(k)?;
                Some(n as f64 / d as f64)
            })
            .unwrap_or_else(|| self.decay.powi(k as i32));
        self.base_lr * factor
    }
}

/// Shortest-decimal representation of `v` as (numerator, power-of-ten
/// denominator), when it round-trips.
fn decimal_ratio(v: f64) -> Option<(u128, u128)> {
    let s = format!("{}", v);
    if s.contains(['e', 'E', '-']) {
        return None;
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s.as_str(), ""),
    };
    if frac_part.len() > 30 {
        return None;
    }
    let digits: String = format!("{int_part}{frac_part}");
    let num: u128 = digits.parse().ok()?;
    let den: u128 = 10u128.checked_pow(frac_part.len() as u32)?;
    // Sanity: the ratio must reproduce the input exactly.
    if num as f64 / den as f64 != v {
        return None;
    }
    Some((num, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_two_steps_match_sequential_reference() {
        // Minimize w^2 from w = 1.0; grad = 2w.
        let mut w = Tensor::<f64>::leaf(&[], vec![1.0]).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg).unwrap();

        // Reference implementation, one scalar, standard bias-corrected Adam.
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * w_ref;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mhat = m / (1.0 - cfg.beta1.powi(t));
            let vhat = v / (1.0 - cfg.beta2.powi(t));
            w_ref -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }

        for _ in 0..2 {
            let loss = w.mul(&w).unwrap();
            loss.backward().unwrap();
            opt.step(&mut [("w", &mut w)]).unwrap();
        }
        let got = w.item().unwrap();
        assert!((got - w_ref).abs() < 1e-12, "{got} vs {w_ref}");
    }

    #[test]
    fn adam_zero_grad_fresh_state_is_fixed_point() {
        let start = vec![0.5f64, -1.25, 3.0];
        let mut w = Tensor::<f64>::leaf(&[3], start.clone()).unwrap();
        // A loss that multiplies by zero still routes (zero) gradients to w.
        let loss = w.scale(0.0).mean_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![0.0; 3]);
        let mut opt = Adam::<f64>::new(AdamConfig::default()).unwrap();
        opt.step(&mut [("w", &mut w)]).unwrap();
        assert_eq!(w.data(), &start[..]);
    }

    #[test]
    fn adam_skips_params_without_grad() {
        let mut a = Tensor::<f64>::leaf(&[], vec![1.0]).unwrap();
        let mut b = Tensor::<f64>::leaf(&[], vec![2.0]).unwrap();
        let loss = a.mul(&a).unwrap();
        loss.backward().unwrap();
        let mut opt = Adam::<f64>::new(AdamConfig::default()).unwrap();
        opt.step(&mut [("a", &mut a), ("b", &mut b)]).unwrap();
        assert!(a.item().unwrap() != 1.0);
        assert_eq!(b.item().unwrap(), 2.0);
    }

    #[test]
    fn adam_nan_grad_names_parameter() {
        let mut w = Tensor::<f64>::leaf(&[], vec![1.0]).unwrap();
        // Force a NaN gradient through 0 * inf coming from x/x' trickery is
        // awkward; instead inject directly via two backward passes of inf-out
        // scale. Simpler: scale by inf -> grad inf, which is also non-finite.
        let loss = w.scale(f64::INFINITY);
        loss.backward().unwrap();
        let mut opt = Adam::<f64>::new(AdamConfig::default()).unwrap();
        let err = opt.step(&mut [("stem.weight", &mut w)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stem.weight"), "{msg}");
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn adam_rejects_bad_config() {
        for cfg in [
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            AdamConfig {
                beta1: 1.0,
                ..AdamConfig::default()
            },
            AdamConfig {
                eps: 0.0,
                ..AdamConfig::default()
            },
        ] {
            assert!(Adam::<f32>::new(cfg).is_err());
        }
    }

    #[test]
    fn lr_schedule_step_decay_values() {
        let s = LrSchedule::new(1e-3, 0.7, 20).unwrap();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(19), 1e-3);
        assert_eq!(s.lr_at(20), 1e-3 * 0.7);
        // Two decays of 0.7 give exactly 0.49 before scaling.
        assert_eq!(s.lr_at(40), 1e-3 * 0.49);
        assert_eq!(s.lr_at(59), 1e-3 * 0.49);
    }

    #[test]
    fn lr_schedule_monotone_nonincreasing() {
        let s = LrSchedule::new(0.01, 0.5, 3).unwrap();
        let mut prev = f64::INFINITY;
        for e in 0..50 {
            let lr = s.lr_at(e);
            assert!(lr <= prev && lr > 0.0);
            prev = lr;
        }
    }

    #[test]
    fn lr_schedule_validation() {
        assert!(LrSchedule::new(0.0, 0.7, 20).is_err());
        assert!(LrSchedule::new(1e-3, 0.0, 20).is_err());
        assert!(LrSchedule::new(1e-3, 1.5, 20).is_err());
        assert!(LrSchedule::new(1e-3, 0.7, 0).is_err());
    }

    #[test]
    fn decimal_ratio_parses_short_decimals() {
        assert_eq!(decimal_ratio(0.7), Some((7, 10)));
        assert_eq!(decimal_ratio(0.49), Some((49, 100)));
        assert_eq!(decimal_ratio(1.0), Some((1, 1)));
        // Whatever is returned must reproduce the value exactly.
        for v in [0.5, 0.7, 0.9, 0.95, 1.0 / 3.0] {
            if let Some((n, d)) = decimal_ratio(v) {
                assert_eq!(n as f64 / d as f64, v);
            }
        }
        // Very long decimal expansions fall back to powi.
        assert_eq!(decimal_ratio(1e-300), None);
    }
}
