//! Tiny-network augmentation (stage 1): the tiny model is trained jointly
//! with a wider weight-shared sibling sampled once per epoch, so the tiny
//! slices receive both their own cross-entropy gradient and the gradient of
//! a larger model that contains them.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Selection, SupernetSpec};
use crate::tensor::{Real, Tensor};

/// Per-layer width menus the augmented sibling is sampled from. Option 0 is
/// always the tiny width and the last option the full width, so every sample
/// contains the tiny model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandOptions {
    pub per_layer: Vec<Vec<usize>>,
}

/// Build the sampling menus for a supernet: `r` widths per scalable layer,
/// evenly spaced from tiny to full (for r = 3 the middle option is the
/// arithmetic midpoint of the extremes).
///
/// `r` must match the model's `width_options`: the per-width normalization
/// sets inside the supernet are allocated from the same ladder, so a
/// different `r` would sample widths the network has no statistics for.
pub fn build_expand_options(spec: &SupernetSpec, r: usize) -> Result<ExpandOptions> {
    if r < 2 {
        return Err(Error::Config(format!(
            "expanding ratio must be at least 2, got {r}"
        )));
    }
    if r != spec.width_options {
        return Err(Error::Config(format!(
            "expanding ratio {r} does not match the model's width_options {}; \
             the supernet allocates one normalization set per option",
            spec.width_options
        )));
    }
    let tiny = spec.tiny_scale.as_f64();
    let mut per_layer = Vec::new();
    for ls in crate::model::enumerate_layers(spec) {
        if ls.kind == crate::model::LayerKind::Pool || !ls.scalable_out {
            continue;
        }
        let options = crate::model::width_options(ls.full_out, tiny, r);
        if options[0] == *options.last().unwrap() {
            return Err(Error::Config(format!(
                "layer {}: tiny width equals full width ({}); nothing to augment",
                ls.name, options[0]
            )));
        }
        per_layer.push(options);
    }
    Ok(ExpandOptions { per_layer })
}

/// Draw one augmented sibling: each layer's width chosen uniformly and
/// independently from its menu. The result always dominates the tiny
/// selection pointwise.
pub fn sample_selection(options: &ExpandOptions, rng: &mut ChaCha8Rng) -> Selection {
    Selection {
        options: options
            .per_layer
            .iter()
            .map(|menu| rng.random_range(0..menu.len()))
            .collect(),
    }
}

/// How the supervision weight β moves across stage-1 epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    /// Constant β.
    Static { beta: f64 },
    /// Endpoint-exact linear interpolation from `start` at epoch 0 to `end`
    /// at the last epoch.
    Linear {
        start: f64,
        end: f64,
        total_epochs: u32,
    },
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<()> {
        let check = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be in [0, 1], got {v}")))
            }
        };
        match *self {
            BetaSchedule::Static { beta } => check(beta, "beta"),
            BetaSchedule::Linear { start, end, total_epochs } => {
                check(start, "beta_start")?;
                check(end, "beta_end")?;
                if total_epochs == 0 {
                    return Err(Error::Config(
                        "linear beta schedule needs at least one epoch".to_string(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// β for a given epoch. Endpoints are exact; epochs past the end clamp.
    pub fn beta_at(&self, epoch: u32) -> f64 {
        match *self {
            BetaSchedule::Static { beta } => beta,
            BetaSchedule::Linear { start, end, total_epochs } => {
                let last = total_epochs - 1;
                if epoch == 0 || last == 0 {
                    return start;
                }
                if epoch >= last {
                    return end;
                }
                start + (end - start) * (epoch as f64 / last as f64)
            }
        }
    }
}

/// Stage-1 joint objective: `β·CE(tiny) + (1−β)·CE(augmented)`.
///
/// Both logit tensors come from the same shared-weight supernet, so the
/// backward pass deposits both terms' gradients into the shared slices.
pub fn stage1_loss<T: Real>(
    logits_tiny: &Tensor<T>,
    logits_aug: &Tensor<T>,
    labels: &[usize],
    beta: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1], got {beta}")));
    }
    let ce_tiny = logits_tiny.cross_entropy(labels)?;
    let ce_aug = logits_aug.cross_entropy(labels)?;
    ce_tiny.scale(beta).add(&ce_aug.scale(1.0 - beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{canonical, mini};
    use crate::stream;
    use crate::tensor::gradcheck::gradcheck;

    #[test]
    fn menus_match_worked_examples() {
        // Full width 64 with a 1/8 tiny fraction and three options.
        let opts = crate::model::width_options(64, 1.0 / 8.0, 3);
        assert_eq!(opts, vec![8, 36, 64]);
        assert_eq!((8 + 64) / 2, 36);
        let opts = crate::model::width_options(64, 1.0 / 8.0, 2);
        assert_eq!(opts, vec![8, 64]);
    }

    #[test]
    fn menus_cover_every_scalable_layer() {
        for spec in [canonical(), mini()] {
            let opts = build_expand_options(&spec, spec.width_options).unwrap();
            let scalable = crate::model::enumerate_layers(&spec)
                .iter()
                .filter(|l| l.kind != crate::model::LayerKind::Pool && l.scalable_out)
                .count();
            assert_eq!(opts.per_layer.len(), scalable);
            for menu in &opts.per_layer {
                assert_eq!(menu.len(), spec.width_options);
                assert!(menu.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn rejects_bad_ratios_and_degenerate_layers() {
        let spec = mini();
        assert!(build_expand_options(&spec, 1).is_err());
        assert!(build_expand_options(&spec, spec.width_options + 1).is_err());
        let mut flat = mini();
        // A one-wide layer cannot expand: tiny(1) == full(1).
        flat.global_mlp = vec![1, 128];
        flat.width_options = 3;
        assert!(build_expand_options(&flat, 3).is_err());
    }

    #[test]
    fn samples_are_uniform_and_contain_tiny() {
        let spec = mini();
        let opts = build_expand_options(&spec, spec.width_options).unwrap();
        let mut rng = stream::rng(42, &[stream::hash_str("subnet")]);
        let n_layers = opts.per_layer.len();
        let mut counts = vec![vec![0usize; spec.width_options]; n_layers];
        let draws = 10_000;
        for _ in 0..draws {
            let sel = sample_selection(&opts, &mut rng);
            assert_eq!(sel.options.len(), n_layers);
            for (li, &o) in sel.options.iter().enumerate() {
                // Option indices are monotone in width, so >= 0 means the
                // sampled width dominates the tiny width.
                counts[li][o] += 1;
            }
        }
        let expect = draws as f64 / spec.width_options as f64;
        for layer in &counts {
            for &c in layer {
                let freq = c as f64 / draws as f64;
                assert!(
                    (freq - 1.0 / spec.width_options as f64).abs() < 0.02,
                    "frequency {freq} too far from uniform"
                );
                assert!((c as f64 - expect).abs() < 0.02 * draws as f64);
            }
        }
    }

    #[test]
    fn selection_sequence_is_a_pure_function_of_the_seed() {
        let spec = mini();
        let opts = build_expand_options(&spec, spec.width_options).unwrap();
        let seq = |seed: u64| -> Vec<Selection> {
            (0..5)
                .map(|epoch| {
                    let mut rng = stream::rng(seed, &[stream::hash_str("subnet"), epoch]);
                    sample_selection(&opts, &mut rng)
                })
                .collect()
        };
        assert_eq!(seq(7), seq(7));
        assert_ne!(seq(7), seq(8));
    }

    #[test]
    fn beta_schedule_endpoints_are_exact() {
        let lin = BetaSchedule::Linear { start: 0.9, end: 0.5, total_epochs: 30 };
        lin.validate().unwrap();
        assert_eq!(lin.beta_at(0), 0.9);
        assert_eq!(lin.beta_at(29), 0.5);
        assert_eq!(lin.beta_at(30), 0.5);
        assert!(lin.beta_at(15) < 0.9 && lin.beta_at(15) > 0.5);
        // Monotone non-increasing for a decaying schedule.
        let mut prev = f64::INFINITY;
        for e in 0..30 {
            let b = lin.beta_at(e);
            assert!(b <= prev);
            prev = b;
        }
        let single = BetaSchedule::Linear { start: 0.9, end: 0.5, total_epochs: 1 };
        assert_eq!(single.beta_at(0), 0.9);
        let fixed = BetaSchedule::Static { beta: 0.5 };
        assert_eq!(fixed.beta_at(0), 0.5);
        assert_eq!(fixed.beta_at(1000), 0.5);
    }

    #[test]
    fn beta_schedule_validation() {
        assert!(BetaSchedule::Static { beta: 1.1 }.validate().is_err());
        assert!(BetaSchedule::Linear { start: -0.1, end: 0.5, total_epochs: 3 }
            .validate()
            .is_err());
        assert!(BetaSchedule::Linear { start: 0.9, end: 0.5, total_epochs: 0 }
            .validate()
            .is_err());
    }

    #[test]
    fn stage1_loss_is_affine_in_beta() {
        let t = Tensor::<f64>::new(&[2, 3], vec![1.0, -0.5, 0.2, 0.0, 2.0, -1.0]).unwrap();
        let a = Tensor::<f64>::new(&[2, 3], vec![0.3, 0.1, -0.2, 1.0, 0.0, 0.5]).unwrap();
        let labels = [2usize, 1];
        let ce_t = t.cross_entropy(&labels).unwrap().item().unwrap();
        let ce_a = a.cross_entropy(&labels).unwrap().item().unwrap();
        for beta in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let l = stage1_loss(&t, &a, &labels, beta).unwrap().item().unwrap();
            assert!((l - (beta * ce_t + (1.0 - beta) * ce_a)).abs() < 1e-12);
        }
        // Endpoints reduce to the single-term losses exactly.
        let l1 = stage1_loss(&t, &a, &labels, 1.0).unwrap().item().unwrap();
        assert_eq!(l1, ce_t + 0.0 * ce_a);
        assert!(stage1_loss(&t, &a, &labels, 1.5).is_err());
    }

    #[test]
    fn stage1_loss_gradient_matches_finite_differences() {
        let labels = [0usize, 2, 1];
        let mut rng = stream::rng(3, &[0]);
        for trial in 0..20 {
            let data_t: Vec<f64> = (0..9)
                .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
                .collect();
            let data_a: Vec<f64> = (0..9)
                .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
                .collect();
            let beta = 0.1 + 0.05 * trial as f64 / 20.0;
            let report = gradcheck(
                |xs| stage1_loss(&xs[0], &xs[1], &labels, beta),
                &[(vec![3, 3], data_t), (vec![3, 3], data_a)],
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-7, "trial {trial}: {report:?}");
        }
    }
}
