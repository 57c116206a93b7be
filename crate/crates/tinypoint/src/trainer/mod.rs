//! Training orchestration: teacher pre-training, stage-1 augmentation,
//! stage-2 distillation, the ablation modes, evaluation, checkpointing and
//! metrics logging.
//!
//! Every mode runs through the same epoch loop and emits the same metrics
//! schema; they differ only in which forward passes are taken and how the
//! per-batch loss is assembled. All randomness is drawn from named streams
//! of the plan's seeds, so a `(plan, seeds)` pair reproduces its metrics
//! files byte for byte.

pub mod checkpoint;
pub mod metrics;

use std::path::{Path, PathBuf};

use crate::augment::{build_expand_options, sample_selection, BetaSchedule, ExpandOptions};
use crate::data::{batches, Dataset, PointCloud};
use crate::distill::{end_to_end_loss, hint_loss, kd_loss, mutual_losses, stage2_loss, HintMap,
    KDConfig};
use crate::error::{Error, Result};
use crate::model::config::render_model_config;
use crate::model::{scaled_width, Phase, Selection, Supernet, SupernetSpec};
use crate::stream;
use crate::tensor::optim::{Adam, AdamConfig, LrSchedule};
use crate::tensor::Tensor;

pub use checkpoint::{config_digest, load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{parse_metrics_csv, read_metrics_csv, EpochMetrics, MetricsWriter, Split,
    CSV_HEADER};

/// Training mode, dispatching which objective the epoch loop assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Full-width network, plain cross-entropy (the future teacher).
    Teacher,
    /// Tiny selection, plain cross-entropy (the baseline).
    TinyBaseline,
    /// Stage 1 only: tiny + sampled augmented sibling.
    NetaugOnly,
    /// Stage 2 only: distill a teacher into the tiny selection.
    KdOnly,
    /// Stage 1 followed by stage 2.
    TwoStage,
    /// Feature (hint) distillation instead of logit distillation.
    Hint,
    /// Tiny and full-width peers distilling from each other online.
    Mutual,
    /// Single loop combining augmentation and distillation with warm-up.
    End2End,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Teacher,
        Mode::TinyBaseline,
        Mode::NetaugOnly,
        Mode::KdOnly,
        Mode::TwoStage,
        Mode::Hint,
        Mode::Mutual,
        Mode::End2End,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Teacher => "teacher",
            Mode::TinyBaseline => "tiny",
            Mode::NetaugOnly => "netaug",
            Mode::KdOnly => "kd",
            Mode::TwoStage => "two-stage",
            Mode::Hint => "hint",
            Mode::Mutual => "mutual",
            Mode::End2End => "end2end",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode '{s}'; expected one of {}",
                    Mode::ALL.map(Mode::name).join(", ")
                ))
            })
    }
}

/// Independent random streams: parameter init / dropout, data shuffling,
/// and subnet sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub subnet: u64,
}

impl Seeds {
    /// Derive the three streams from one user-facing seed.
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            init: stream::mix(seed, &[stream::hash_str("init")]),
            data: stream::mix(seed, &[stream::hash_str("data")]),
            subnet: stream::mix(seed, &[stream::hash_str("subnet")]),
        }
    }
}

/// How β varies over a stage, before the stage length is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Static,
    Linear,
}

/// Fully resolved training plan.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub mode: Mode,
    pub epochs_stage1: u32,
    pub epochs_stage2: u32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr_decay: f64,
    pub lr_step_epochs: u32,
    pub beta_mode: BetaMode,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kd: KDConfig,
    pub warmup_epochs: u32,
    /// Widths per sampling menu; must equal the model's `width_options`.
    pub expand_ratio: usize,
    pub seeds: Seeds,
    pub teacher_checkpoint: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub allow_digest_mismatch: bool,
    pub out_dir: PathBuf,
    pub quiet: bool,
}

impl TrainPlan {
    /// Desk-scale defaults (reference-scale epoch counts stay available via
    /// the config surface).
    pub fn new(mode: Mode, out_dir: PathBuf) -> Self {
        TrainPlan {
            mode,
            epochs_stage1: 30,
            epochs_stage2: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            lr_decay: 0.7,
            lr_step_epochs: 20,
            beta_mode: BetaMode::Linear,
            beta_start: 0.9,
            beta_end: 0.5,
            kd: KDConfig::default(),
            warmup_epochs: 10,
            expand_ratio: 3,
            seeds: Seeds::from_master(7),
            teacher_checkpoint: None,
            init_checkpoint: None,
            allow_digest_mismatch: false,
            out_dir,
            quiet: false,
        }
    }

    fn beta_schedule(&self, epochs: u32) -> BetaSchedule {
        match self.beta_mode {
            BetaMode::Static => BetaSchedule::Static { beta: self.beta_start },
            BetaMode::Linear => BetaSchedule::Linear {
                start: self.beta_start,
                end: self.beta_end,
                total_epochs: epochs.max(1),
            },
        }
    }

    /// Does this plan's mode actually consume a teacher checkpoint?
    pub fn needs_teacher(&self) -> bool {
        match self.mode {
            Mode::KdOnly | Mode::TwoStage | Mode::Hint => self.kd.alpha > 0.0,
            Mode::End2End => self.kd.alpha > 0.0 && self.warmup_epochs < self.epochs_stage1,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        self.adam.validate()?;
        self.kd.validate()?;
        LrSchedule::new(self.adam.lr, self.lr_decay, self.lr_step_epochs)?;
        self.beta_schedule(1).validate()?;
        if self.mode == Mode::TwoStage && (self.epochs_stage1 == 0 || self.epochs_stage2 == 0) {
            return Err(Error::Config(
                "two-stage training needs positive epoch counts for both stages".to_string(),
            ));
        }
        if self.needs_teacher() && self.teacher_checkpoint.is_none() {
            return Err(Error::Config(format!(
                "mode '{}' distills from a teacher; pass --teacher <checkpoint>",
                self.mode.name()
            )));
        }
        Ok(())
    }
}

/// What one finished stage left behind.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub name: String,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub best_test_oa: f64,
    pub final_test_oa: f64,
    pub epochs: u32,
}

/// A finished run: one outcome per stage, in execution order.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: Mode,
    pub stages: Vec<StageOutcome>,
}

impl RunSummary {
    /// Test accuracy of the deliverable model: the last stage's best.
    pub fn final_best_oa(&self) -> f64 {
        self.stages.last().map(|s| s.best_test_oa).unwrap_or(0.0)
    }
}

/// Accuracy and mean cross-entropy of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub oa: f64,
    pub ce: f64,
}

/// Evaluation-mode accuracy over a split; argmax ties resolve to the lowest
/// class index. Never mutates the network.
pub fn evaluate(
    net: &Supernet,
    sel: &Selection,
    clouds: &[PointCloud],
    batch_size: usize,
) -> Result<EvalStats> {
    if clouds.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".to_string()));
    }
    let mut correct = 0usize;
    let mut ce_sum = 0.0f64;
    let mut n = 0usize;
    for batch in batches(clouds, batch_size, false, 0, 0)? {
        let out = net.forward(&batch, sel, Phase::Eval, None)?;
        ce_sum +=
            out.logits.cross_entropy(&batch.labels)?.item()? as f64 * batch.batch as f64;
        correct += count_correct(&out.logits, &batch.labels);
        n += batch.batch;
    }
    Ok(EvalStats { oa: correct as f64 / n as f64, ce: ce_sum / n as f64 })
}

fn count_correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    let data = logits.data();
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &data[i * c..(i + 1) * c];
            let mut arg = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            arg == label
        })
        .count()
}

/// Which loss the epoch loop assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobKind {
    CeFull,
    CeTiny,
    Netaug,
    Distill,
    Hint,
    Mutual,
    EndToEnd,
}

impl JobKind {
    fn uses_beta(self) -> bool {
        matches!(self, JobKind::Netaug | JobKind::Mutual | JobKind::EndToEnd)
    }

    fn samples_subnet(self) -> bool {
        matches!(self, JobKind::Netaug | JobKind::EndToEnd)
    }
}

/// Per-batch loss components (f64 for logging; the training loss tensor is
/// assembled separately from the same graph nodes).
#[derive(Debug, Clone, Copy, Default)]
struct Components {
    ce_tiny: f64,
    ce_aug: f64,
    kd: f64,
    hint: f64,
}

fn mode_total(kind: JobKind, c: &Components, alpha: f64, beta: f64) -> f64 {
    match kind {
        JobKind::CeFull | JobKind::CeTiny => c.ce_tiny,
        JobKind::Netaug => beta * c.ce_tiny + (1.0 - beta) * c.ce_aug,
        JobKind::Distill => alpha * c.kd + (1.0 - alpha) * c.ce_tiny,
        JobKind::Hint => alpha * c.hint + (1.0 - alpha) * c.ce_tiny,
        JobKind::Mutual => beta * c.ce_tiny + (1.0 - beta) * c.ce_aug + c.kd,
        JobKind::EndToEnd => {
            alpha * c.kd + (1.0 - alpha) * (beta * c.ce_tiny + (1.0 - beta) * c.ce_aug)
        }
    }
}

/// Run a full plan on a dataset. Stages execute in order; each leaves a
/// metrics CSV and a best-test-accuracy checkpoint in the output directory.
pub fn run(plan: &TrainPlan, spec: &SupernetSpec, ds: &Dataset) -> Result<RunSummary> {
    plan.validate()?;
    spec.validate()?;
    ds.validate()?;
    if ds.num_classes() != spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model is configured for {}",
            ds.num_classes(),
            spec.num_classes
        )));
    }
    std::fs::create_dir_all(&plan.out_dir).map_err(|e| Error::io(&plan.out_dir, e))?;
    let digest = config_digest(&render_model_config(spec)?);

    let mut net = Supernet::new(spec.clone(), plan.seeds.init)?;
    if let Some(path) = &plan.init_checkpoint {
        let ckpt = load_state_checked(path, digest, plan.allow_digest_mismatch)?;
        net.load_state(&ckpt.tensors)?;
    }
    let teacher = match (&plan.teacher_checkpoint, plan.needs_teacher()) {
        (Some(path), true) => {
            let ckpt = load_state_checked(path, digest, plan.allow_digest_mismatch)?;
            let mut t = Supernet::new(spec.clone(), 0)?;
            t.load_state(&ckpt.tensors)?;
            Some(t)
        }
        _ => None,
    };

    let mut stages = Vec::new();
    match plan.mode {
        Mode::Teacher => {
            stages.push(run_stage(
                &mut net, None, JobKind::CeFull, "teacher", plan.epochs_stage1, plan, ds, digest,
            )?);
        }
        Mode::TinyBaseline => {
            stages.push(run_stage(
                &mut net, None, JobKind::CeTiny, "tiny", plan.epochs_stage1, plan, ds, digest,
            )?);
        }
        Mode::NetaugOnly => {
            stages.push(run_stage(
                &mut net, None, JobKind::Netaug, "stage1", plan.epochs_stage1, plan, ds, digest,
            )?);
        }
        Mode::KdOnly => {
            stages.push(run_stage(
                &mut net,
                teacher.as_ref(),
                JobKind::Distill,
                "stage2",
                plan.epochs_stage2,
                plan,
                ds,
                digest,
            )?);
        }
        Mode::TwoStage => {
            let s1 = run_stage(
                &mut net, None, JobKind::Netaug, "stage1", plan.epochs_stage1, plan, ds, digest,
            )?;
            // Stage 2 resumes from stage 1's best snapshot, not its final
            // state.
            let best = load_checkpoint(&s1.checkpoint_path)?;
            net.load_state(&best.tensors)?;
            stages.push(s1);
            stages.push(run_stage(
                &mut net,
                teacher.as_ref(),
                JobKind::Distill,
                "stage2",
                plan.epochs_stage2,
                plan,
                ds,
                digest,
            )?);
        }
        Mode::Hint => {
            stages.push(run_stage(
                &mut net,
                teacher.as_ref(),
                JobKind::Hint,
                "hint",
                plan.epochs_stage2,
                plan,
                ds,
                digest,
            )?);
        }
        Mode::Mutual => {
            stages.push(run_stage(
                &mut net, None, JobKind::Mutual, "mutual", plan.epochs_stage1, plan, ds, digest,
            )?);
        }
        Mode::End2End => {
            stages.push(run_stage(
                &mut net,
                teacher.as_ref(),
                JobKind::EndToEnd,
                "end2end",
                plan.epochs_stage1,
                plan,
                ds,
                digest,
            )?);
        }
    }
    Ok(RunSummary { mode: plan.mode, stages })
}

fn load_state_checked(
    path: &Path,
    digest: [u8; 32],
    allow_mismatch: bool,
) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config_digest != digest && !allow_mismatch {
        return Err(Error::Config(format!(
            "checkpoint {} was written for a different model configuration; \
             pass --allow-digest-mismatch to load it anyway",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn snapshot(net: &Supernet, hint_map: Option<&HintMap>, digest: [u8; 32], epoch: u32) -> Checkpoint {
    let mut tensors = net.state_tensors();
    if let Some(map) = hint_map {
        tensors.push((
            "hint.map".to_string(),
            map.weight.shape().to_vec(),
            map.weight.data().to_vec(),
        ));
    }
    Checkpoint { tensors, config_digest: digest, epoch }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    net: &mut Supernet,
    teacher: Option<&Supernet>,
    kind: JobKind,
    stage_name: &str,
    epochs: u32,
    plan: &TrainPlan,
    ds: &Dataset,
    digest: [u8; 32],
) -> Result<StageOutcome> {
    let metrics_path = plan.out_dir.join(format!("metrics_{stage_name}.csv"));
    let checkpoint_path = plan.out_dir.join(format!("ckpt_{stage_name}.t3dn"));
    let mut writer = MetricsWriter::create(&metrics_path)?;

    let schedule = LrSchedule::new(plan.adam.lr, plan.lr_decay, plan.lr_step_epochs)?;
    let beta_schedule = plan.beta_schedule(epochs);
    let expand: Option<ExpandOptions> = if kind.samples_subnet() {
        Some(build_expand_options(&net.spec, plan.expand_ratio)?)
    } else {
        None
    };
    let tiny_sel = net.tiny_selection();
    let full_sel = net.full_selection();
    let eval_sel = if kind == JobKind::CeFull { full_sel.clone() } else { tiny_sel.clone() };
    let eval_desc = eval_sel.describe(net);

    let mut hint_map: Option<HintMap> = if kind == JobKind::Hint {
        let full_w = *net.spec.global_mlp.last().unwrap();
        let tiny_w = scaled_width(full_w, net.spec.tiny_scale.as_f64());
        Some(if tiny_w == full_w {
            HintMap::identity(full_w)?
        } else {
            let mut rng = stream::rng(plan.seeds.init, &[stream::hash_str("hint.map")]);
            HintMap::new(tiny_w, full_w, &mut rng)
        })
    } else {
        None
    };

    let mut adam = Adam::<f32>::new(plan.adam)?;
    let mut best_oa = f64::NEG_INFINITY;
    let mut best = snapshot(net, hint_map.as_ref(), digest, 0);
    let mut final_oa = 0.0;

    for epoch in 0..epochs {
        let lr = schedule.lr_at(epoch);
        adam.set_lr(lr);
        let beta = if kind.uses_beta() { beta_schedule.beta_at(epoch) } else { 1.0 };
        let alpha = match kind {
            JobKind::Distill | JobKind::Hint => plan.kd.alpha,
            JobKind::EndToEnd if epoch >= plan.warmup_epochs => plan.kd.alpha,
            _ => 0.0,
        };
        let aug_sel = expand.as_ref().map(|opts| {
            let mut rng =
                stream::rng(plan.seeds.subnet, &[stream::hash_str("subnet"), epoch as u64]);
            sample_selection(opts, &mut rng)
        });

        let mut sums = Components::default();
        let mut correct = 0usize;
        let mut n = 0usize;
        for (bi, batch) in batches(&ds.train, plan.batch_size, true, plan.seeds.data, epoch)?
            .into_iter()
            .enumerate()
        {
            let role_rng = |role: &str| {
                stream::rng(
                    plan.seeds.init,
                    &[
                        stream::hash_str("dropout"),
                        stream::hash_str(role),
                        epoch as u64,
                        bi as u64,
                    ],
                )
            };
            let b = batch.batch as f64;
            let mut comp = Components::default();
            let (loss, train_logits) = match kind {
                JobKind::CeFull | JobKind::CeTiny => {
                    let sel = if kind == JobKind::CeFull { &full_sel } else { &tiny_sel };
                    let mut rng = role_rng("tiny");
                    let out = net.forward(&batch, sel, Phase::Train, Some(&mut rng))?;
                    let ce = out.logits.cross_entropy(&batch.labels)?;
                    comp.ce_tiny = ce.item()? as f64;
                    (ce, out.logits)
                }
                JobKind::Netaug => {
                    let mut rng_t = role_rng("tiny");
                    let out_t = net.forward(&batch, &tiny_sel, Phase::Train, Some(&mut rng_t))?;
                    let mut rng_a = role_rng("aug");
                    let out_a = net.forward(
                        &batch,
                        aug_sel.as_ref().expect("sampled each epoch"),
                        Phase::TrainAux,
                        Some(&mut rng_a),
                    )?;
                    let ce_t = out_t.logits.cross_entropy(&batch.labels)?;
                    let ce_a = out_a.logits.cross_entropy(&batch.labels)?;
                    comp.ce_tiny = ce_t.item()? as f64;
                    comp.ce_aug = ce_a.item()? as f64;
                    let loss = ce_t.scale(beta).add(&ce_a.scale(1.0 - beta))?;
                    (loss, out_t.logits)
                }
                JobKind::Distill => {
                    let mut rng = role_rng("tiny");
                    let out = net.forward(&batch, &tiny_sel, Phase::Train, Some(&mut rng))?;
                    let ce = out.logits.cross_entropy(&batch.labels)?;
                    comp.ce_tiny = ce.item()? as f64;
                    if alpha > 0.0 {
                        let t = teacher.expect("validated by the plan");
                        let t_out = t.forward(&batch, &full_sel, Phase::Eval, None)?;
                        let kd =
                            kd_loss(&t_out.logits, &out.logits, plan.kd.temperature)?;
                        comp.kd = kd.item()? as f64;
                        (stage2_loss(&kd, &ce, alpha)?, out.logits)
                    } else {
                        (ce, out.logits)
                    }
                }
                JobKind::Hint => {
                    let mut rng = role_rng("tiny");
                    let out = net.forward(&batch, &tiny_sel, Phase::Train, Some(&mut rng))?;
                    let ce = out.logits.cross_entropy(&batch.labels)?;
                    comp.ce_tiny = ce.item()? as f64;
                    if alpha > 0.0 {
                        let t = teacher.expect("validated by the plan");
                        let t_out = t.forward(&batch, &full_sel, Phase::Eval, None)?;
                        let h = hint_loss(
                            &t_out.global_feature,
                            &out.global_feature,
                            hint_map.as_ref().expect("created for hint runs"),
                        )?;
                        comp.hint = h.item()? as f64;
                        let loss = h.scale(alpha).add(&ce.scale(1.0 - alpha))?;
                        (loss, out.logits)
                    } else {
                        (ce, out.logits)
                    }
                }
                JobKind::Mutual => {
                    let mut rng_t = role_rng("tiny");
                    let out_t = net.forward(&batch, &tiny_sel, Phase::Train, Some(&mut rng_t))?;
                    let mut rng_a = role_rng("aug");
                    let out_f =
                        net.forward(&batch, &full_sel, Phase::TrainAux, Some(&mut rng_a))?;
                    let ce_t = out_t.logits.cross_entropy(&batch.labels)?;
                    let ce_f = out_f.logits.cross_entropy(&batch.labels)?;
                    let (kd_t, kd_f) =
                        mutual_losses(&out_t.logits, &out_f.logits, plan.kd.temperature)?;
                    comp.ce_tiny = ce_t.item()? as f64;
                    comp.ce_aug = ce_f.item()? as f64;
                    comp.kd = beta * kd_t.item()? as f64 + (1.0 - beta) * kd_f.item()? as f64;
                    let tiny_term = ce_t.add(&kd_t)?.scale(beta);
                    let aug_term = ce_f.add(&kd_f)?.scale(1.0 - beta);
                    (tiny_term.add(&aug_term)?, out_t.logits)
                }
                JobKind::EndToEnd => {
                    let mut rng_t = role_rng("tiny");
                    let out_t = net.forward(&batch, &tiny_sel, Phase::Train, Some(&mut rng_t))?;
                    let mut rng_a = role_rng("aug");
                    let out_a = net.forward(
                        &batch,
                        aug_sel.as_ref().expect("sampled each epoch"),
                        Phase::TrainAux,
                        Some(&mut rng_a),
                    )?;
                    let ce_t = out_t.logits.cross_entropy(&batch.labels)?;
                    let ce_a = out_a.logits.cross_entropy(&batch.labels)?;
                    comp.ce_tiny = ce_t.item()? as f64;
                    comp.ce_aug = ce_a.item()? as f64;
                    if alpha > 0.0 {
                        let t = teacher.expect("validated by the plan");
                        let t_out = t.forward(&batch, &full_sel, Phase::Eval, None)?;
                        let kd =
                            kd_loss(&t_out.logits, &out_t.logits, plan.kd.temperature)?;
                        comp.kd = kd.item()? as f64;
                        let loss = end_to_end_loss(
                            &kd,
                            &ce_t,
                            &ce_a,
                            plan.kd.alpha,
                            beta,
                            epoch,
                            plan.warmup_epochs,
                        )?;
                        (loss, out_t.logits)
                    } else {
                        // Warm-up (and the alpha=0 ablation) is exactly the
                        // stage-1 objective — the teacher is not even run.
                        let loss = ce_t.scale(beta).add(&ce_a.scale(1.0 - beta))?;
                        (loss, out_t.logits)
                    }
                }
            };

            let loss_val = loss.item()? as f64;
            if !loss_val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    message: format!("loss became {loss_val}"),
                });
            }
            loss.backward()?;
            let mut owned = net.named_params_mut();
            let mut view: Vec<(&str, &mut Tensor<f32>)> = owned
                .iter_mut()
                .map(|(name, t)| (name.as_str(), &mut **t))
                .collect();
            if let Some(map) = hint_map.as_mut() {
                view.push(("hint.map", &mut map.weight));
            }
            adam.step(&mut view)?;

            sums.ce_tiny += comp.ce_tiny * b;
            sums.ce_aug += comp.ce_aug * b;
            sums.kd += comp.kd * b;
            sums.hint += comp.hint * b;
            correct += count_correct(&train_logits, &batch.labels);
            n += batch.batch;
        }

        let means = Components {
            ce_tiny: sums.ce_tiny / n as f64,
            ce_aug: sums.ce_aug / n as f64,
            kd: sums.kd / n as f64,
            hint: sums.hint / n as f64,
        };
        let train_selection = match kind {
            JobKind::CeFull | JobKind::Mutual => full_sel.describe(net),
            JobKind::Netaug | JobKind::EndToEnd => {
                aug_sel.as_ref().expect("sampled each epoch").describe(net)
            }
            _ => tiny_sel.describe(net),
        };
        writer.log(EpochMetrics {
            epoch,
            split: Split::Train,
            ce_tiny: means.ce_tiny,
            ce_aug: means.ce_aug,
            kd: means.kd,
            hint: means.hint,
            total: mode_total(kind, &means, alpha, beta),
            oa: correct as f64 / n as f64,
            lr,
            beta,
            alpha,
            selection: train_selection,
        })?;

        let stats = evaluate(net, &eval_sel, &ds.test, plan.batch_size)?;
        writer.log(EpochMetrics {
            epoch,
            split: Split::Test,
            ce_tiny: stats.ce,
            ce_aug: 0.0,
            kd: 0.0,
            hint: 0.0,
            total: stats.ce,
            oa: stats.oa,
            lr,
            beta,
            alpha,
            selection: eval_desc.clone(),
        })?;
        final_oa = stats.oa;
        if stats.oa > best_oa {
            best_oa = stats.oa;
            best = snapshot(net, hint_map.as_ref(), digest, epoch);
        }
        if !plan.quiet {
            eprintln!(
                "[{stage_name}] epoch {}/{epochs} loss {:.4} test-oa {:.4} lr {lr:.6}",
                epoch + 1,
                mode_total(kind, &means, alpha, beta),
                stats.oa,
            );
        }
    }

    save_checkpoint(&best, &checkpoint_path)?;
    Ok(StageOutcome {
        name: stage_name.to_string(),
        metrics_path,
        checkpoint_path,
        best_test_oa: if epochs == 0 { 0.0 } else { best_oa },
        final_test_oa: final_oa,
        epochs,
    })
}
