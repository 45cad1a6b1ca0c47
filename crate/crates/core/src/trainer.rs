//! Supervised, semi-supervised, and baseline training loops.
//!
//! One step in supervised mode: encode the 2D and 3D poses of a labeled
//! batch, decode both latent features, generate the final 3D prediction,
//! and take one Adam step on the weighted sum of estimation, perceptual,
//! and reconstruction losses.
//!
//! Semi-supervised mode adds an unlabeled 2D batch per step: its latent
//! feature feeds the discriminator (adversarial alignment) and its
//! predicted pose is re-encoded through the 3D encoder for a second
//! perceptual term. Each main step is followed by discriminator updates on
//! detached features.
//!
//! Determinism: every random choice draws from a purpose-keyed stream of
//! the config seed, so runs with the same seed and config produce
//! bit-identical parameters and logs.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{compute_norm_stats, NormStats, PoseSample};
use crate::error::{Error, Result};
use crate::graph::{BatchNormState, NodeId, Phase, Tape};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::metrics::{evaluate, EvalOptions};
use crate::model::{ArchKind, Model, ParamGroup};
use crate::optim::Adam;
use crate::rng::{stream, Rng, Stream};
use crate::scalar::{real, to_f64, Real};
use crate::skeleton::JointSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Semi,
    Baseline,
}

/// Where the re-encoded 3D pose in semi-supervised mode comes from: the
/// generator's final prediction (default) or the decoder's reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReencodeSource {
    Generator,
    Decoder,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub weights: LossWeights,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub width: usize,
    pub dropout: f64,
    pub joint_set: JointSet,
    /// Keep re-encoding gradients out of the 3D encoder's parameters.
    pub detach_reencoder: bool,
    /// Re-encode the generator's prediction or the decoder's output.
    pub reencode_source: ReencodeSource,
    /// Discriminator updates per main step (semi mode).
    pub disc_ratio: usize,
    /// Per-epoch multiplicative learning-rate decay; 1.0 disables it.
    pub lr_decay: f64,
    /// Stop after this many validations without improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Supervised,
            weights: LossWeights::default(),
            lr: 0.001,
            batch_size: 64,
            epochs: 25,
            seed: 0,
            width: 1024,
            dropout: 0.5,
            joint_set: JointSet::H36m16,
            detach_reencoder: false,
            reencode_source: ReencodeSource::Generator,
            disc_ratio: 1,
            lr_decay: 1.0,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr decay factor must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub disc_loss: f64,
    /// Present on the last step of an epoch: validation MPJPE (P#1, mm).
    pub val_mpjpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient appeared at this step; the returned
    /// model holds the last good parameters from before the step.
    NanAbort { step: u64 },
}

#[derive(Debug)]
pub struct TrainOutcome<R: Real> {
    /// Best-validation model (or the last good model on abort).
    pub model: Model<R>,
    pub norm: NormStats<R>,
    pub log: Vec<TrainLogEntry>,
    pub status: TrainStatus,
    pub best_val_mpjpe: f64,
}

/// Write the per-step loss log as CSV.
pub fn write_log_csv(path: &Path, log: &[TrainLogEntry]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "step, est, perc_l, rec, disc_ul, perc_ul, total, disc_loss")?;
    for e in log {
        writeln!(
            out,
            "{}, {}, {}, {}, {}, {}, {}, {}",
            e.step,
            e.losses.est,
            e.losses.perceptual_labeled,
            e.losses.rec,
            e.losses.disc_unlabeled,
            e.losses.perceptual_unlabeled,
            e.losses.total,
            e.disc_loss
        )?;
    }
    Ok(())
}

pub fn train_supervised<R: Real>(
    labeled: &[PoseSample<R>],
    val: &[PoseSample<R>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>> {
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::Supervised;
    train(labeled, &[], val, &cfg)
}

pub fn train_semi<R: Real>(
    labeled: &[PoseSample<R>],
    unlabeled: &[PoseSample<R>],
    val: &[PoseSample<R>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>> {
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::Semi;
    train(labeled, unlabeled, val, &cfg)
}

pub fn train_baseline<R: Real>(
    labeled: &[PoseSample<R>],
    val: &[PoseSample<R>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>> {
    let mut cfg = cfg.clone();
    cfg.mode = TrainMode::Baseline;
    train(labeled, &[], val, &cfg)
}

/// Cycles shuffled unlabeled indices independently of the labeled epochs.
struct UnlabeledCycle {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl UnlabeledCycle {
    fn new(n: usize, seed: u64) -> Self {
        UnlabeledCycle {
            order: (0..n).collect(),
            pos: n, // force a shuffle on first use
            rng: stream(seed, Stream::ShuffleUnlabeled),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn batch2d<R: Real>(
    samples: &[PoseSample<R>],
    idxs: &[usize],
    norm: &NormStats<R>,
) -> Tensor<R> {
    let rows: Vec<Vec<R>> = idxs
        .iter()
        .map(|&i| norm.normalize2d(&samples[i].flat2d()))
        .collect();
    Tensor::from_rows(&rows)
}

fn batch3d<R: Real>(
    samples: &[PoseSample<R>],
    idxs: &[usize],
    norm: &NormStats<R>,
) -> Tensor<R> {
    let rows: Vec<Vec<R>> = idxs
        .iter()
        .map(|&i| norm.normalize3d(&samples[i].flat3d().expect("labeled sample")))
        .collect();
    Tensor::from_rows(&rows)
}

/// Leaf ids handed to bind() are consecutive from zero in params order; a
/// group's ids are the positions its names occupy in the full listing.
fn group_ids<R: Real>(model: &Model<R>, group: ParamGroup) -> Vec<NodeId> {
    model
        .params(ParamGroup::All)
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| {
            model
                .params(group)
                .iter()
                .any(|(gname, _)| gname == name)
        })
        .map(|(i, _)| NodeId::from_index(i))
        .collect()
}

struct StepOutput {
    breakdown: LossBreakdown,
    disc_loss: f64,
    /// Non-finite loss detected before applying any update.
    poisoned: bool,
}

fn main_group_for(mode: TrainMode) -> ParamGroup {
    match mode {
        TrainMode::Baseline => ParamGroup::Generator,
        _ => ParamGroup::Main,
    }
}

pub fn train<R: Real>(
    labeled: &[PoseSample<R>],
    unlabeled: &[PoseSample<R>],
    val: &[PoseSample<R>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<R>> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::Config("labeled training set is empty".into()));
    }
    if labeled.iter().any(|s| !s.is_labeled()) {
        return Err(Error::Config(
            "every sample in the labeled training set needs a 3D pose".into(),
        ));
    }
    if val.is_empty() || val.iter().any(|s| !s.is_labeled()) {
        return Err(Error::Config("validation set must be non-empty and labeled".into()));
    }
    let joints = labeled[0].n_joints();
    if cfg.joint_set != JointSet::Custom {
        let expected = crate::skeleton::Skeleton::<R>::builtin(cfg.joint_set)?.n_joints();
        if expected != joints {
            return Err(Error::Config(format!(
                "joint set expects {expected} joints but the data has {joints}"
            )));
        }
    }
    if val[0].n_joints() != joints
        || unlabeled.iter().any(|s| s.n_joints() != joints)
    {
        return Err(Error::Config(
            "labeled, unlabeled, and validation sets must share one joint count".into(),
        ));
    }

    // Semi mode degenerates to supervised when there is nothing for the
    // unlabeled terms to do. Skipping the unlabeled work entirely (rather
    // than running it with zero weights) keeps batch-norm statistics and
    // discriminator parameters bit-identical to a supervised run.
    let mut mode = cfg.mode;
    if mode == TrainMode::Semi && unlabeled.is_empty() {
        log::warn!("semi-supervised mode with no unlabeled data; falling back to supervised");
        mode = TrainMode::Supervised;
    }
    if mode == TrainMode::Semi && cfg.weights.unlabeled_inactive() {
        log::info!("unlabeled loss weights are zero; training proceeds as supervised");
        mode = TrainMode::Supervised;
    }

    // Normalization statistics always come from the labeled set, so the
    // preprocessing (and therefore the labeled-path trajectory) does not
    // depend on which unlabeled samples are present.
    let norm = compute_norm_stats(labeled)?;

    let arch = if mode == TrainMode::Baseline {
        ArchKind::Baseline
    } else {
        ArchKind::Full
    };
    let mut weights_rng = stream(cfg.seed, Stream::Weights);
    let mut model: Model<R> = Model::new(
        joints,
        cfg.width,
        real(cfg.dropout),
        cfg.joint_set,
        arch,
        &mut weights_rng,
    )?;

    let main_group = main_group_for(mode);
    let main_ids = group_ids(&model, main_group);
    let disc_ids = group_ids(&model, ParamGroup::Discriminator);
    let mut adam_main: Adam<R> = Adam::new(real(cfg.lr));
    let mut adam_disc: Adam<R> = Adam::new(real(cfg.lr));

    let mut shuffle_rng = stream(cfg.seed, Stream::ShuffleLabeled);
    let mut drop_rng = stream(cfg.seed, Stream::DropoutLabeled);
    let mut ul_drop_rng = stream(cfg.seed, Stream::DropoutUnlabeled);
    let mut ul_cycle = UnlabeledCycle::new(unlabeled.len().max(1), cfg.seed);

    let eval_opts = EvalOptions::<R>::default();
    let mut log_entries: Vec<TrainLogEntry> = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut bad_validations = 0usize;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                // Batch normalization is undefined on singleton batches.
                continue;
            }
            step += 1;
            // Forward passes update batch-norm running statistics before the
            // loss is known to be finite, so snapshot them to keep the
            // abort-with-last-good-model guarantee airtight.
            let bn_snapshot: Vec<BatchNormState<R>> =
                model.bn_states().into_iter().map(|(_, s)| s.clone()).collect();
            let out = match mode {
                TrainMode::Supervised => supervised_step(
                    &mut model, &main_ids, &mut adam_main, labeled, batch, &norm, cfg,
                    &mut drop_rng,
                )?,
                TrainMode::Baseline => baseline_step(
                    &mut model, &main_ids, &mut adam_main, labeled, batch, &norm,
                    &mut drop_rng,
                )?,
                TrainMode::Semi => {
                    let ul_batch = ul_cycle.next_batch(batch.len());
                    semi_step(
                        &mut model, &main_ids, &disc_ids, &mut adam_main, &mut adam_disc,
                        labeled, batch, unlabeled, &ul_batch, &norm, cfg, &mut drop_rng,
                        &mut ul_drop_rng,
                    )?
                }
            };
            if out.poisoned {
                log::error!("non-finite loss at step {step}; aborting with the last good model");
                for ((_, state), saved) in model.bn_states_mut().into_iter().zip(bn_snapshot) {
                    *state = saved;
                }
                return Ok(TrainOutcome {
                    model,
                    norm,
                    log: log_entries,
                    status: TrainStatus::NanAbort { step },
                    best_val_mpjpe: best_val,
                });
            }
            log_entries.push(TrainLogEntry {
                step,
                epoch,
                losses: out.breakdown,
                disc_loss: out.disc_loss,
                val_mpjpe: None,
            });
        }

        let report = evaluate(&mut model, val, &norm, &eval_opts)?;
        let val_mpjpe = report.mpjpe_p1;
        if let Some(last) = log_entries.last_mut() {
            last.val_mpjpe = Some(val_mpjpe);
        }
        log::info!(
            "epoch {epoch}: step {step}, train total {:.6}, val mpjpe {:.3} mm",
            log_entries.last().map(|e| e.losses.total).unwrap_or(f64::NAN),
            val_mpjpe
        );
        if val_mpjpe.is_finite() && val_mpjpe < best_val {
            best_val = val_mpjpe;
            best_model = model.clone();
            bad_validations = 0;
        } else {
            bad_validations += 1;
            if bad_validations >= cfg.patience {
                log::info!(
                    "early stop after {bad_validations} validations without improvement"
                );
                break;
            }
        }
        if cfg.lr_decay < 1.0 {
            adam_main.scale_lr(cfg.lr_decay);
            adam_disc.scale_lr(cfg.lr_decay);
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        norm,
        log: log_entries,
        status: TrainStatus::Completed,
        best_val_mpjpe: best_val,
    })
}

/// Forward the labeled supervised path on `tape`, returning the term node
/// ids (est, perceptual, rec) plus the latent ids (f2d, h3d).
#[allow(clippy::type_complexity)]
fn supervised_terms<R: Real>(
    model: &mut Model<R>,
    tape: &mut Tape<R>,
    bound: &crate::model::BoundModel,
    x2: NodeId,
    y3: NodeId,
    rng: &mut Rng,
) -> Result<(NodeId, NodeId, NodeId, NodeId, NodeId)> {
    let f2d = model.encode2d(tape, bound, x2, Phase::Train, rng)?;
    let h3d = model.encode3d(tape, bound, y3, Phase::Train, rng)?;
    let dec_h = model.decode(tape, bound, h3d, Phase::Train, rng)?;
    let dec_f = model.decode(tape, bound, f2d, Phase::Train, rng)?;
    let pred = model.generate(tape, bound, x2, Some(f2d), Phase::Train, rng)?;
    let est = losses::loss_est(tape, pred, y3)?;
    let perc = losses::loss_perceptual(tape, f2d, h3d)?;
    let rec = losses::loss_rec(tape, dec_h, dec_f, y3)?;
    Ok((est, perc, rec, f2d, h3d))
}

fn apply_main_step<R: Real>(
    model: &mut Model<R>,
    group: ParamGroup,
    ids: &[NodeId],
    adam: &mut Adam<R>,
    tape: &Tape<R>,
    total: NodeId,
) -> Result<bool> {
    if !to_f64(tape.value(total).item()).is_finite() {
        return Ok(true);
    }
    let grads = tape.backward(total);
    let grad_list: Vec<Tensor<R>> = ids.iter().map(|&id| grads.wrt(id, tape)).collect();
    let mut params = model.params_mut(group);
    match adam.step(&mut params, &grad_list) {
        Ok(()) => Ok(false),
        Err(Error::NonFinite(msg)) => {
            log::error!("{msg}");
            Ok(true)
        }
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn supervised_step<R: Real>(
    model: &mut Model<R>,
    main_ids: &[NodeId],
    adam: &mut Adam<R>,
    labeled: &[PoseSample<R>],
    batch: &[usize],
    norm: &NormStats<R>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x2 = tape.leaf(batch2d(labeled, batch, norm));
    let y3 = tape.leaf(batch3d(labeled, batch, norm));
    let (est, perc, rec, _, _) = supervised_terms(model, &mut tape, &bound, x2, y3, rng)?;
    let total = losses::total_supervised(&mut tape, &cfg.weights, est, perc, rec)?;
    let breakdown = losses::breakdown(&tape, est, perc, rec, None, None, total);
    let poisoned = apply_main_step(model, ParamGroup::Main, main_ids, adam, &tape, total)?;
    Ok(StepOutput {
        breakdown,
        disc_loss: 0.0,
        poisoned,
    })
}

fn baseline_step<R: Real>(
    model: &mut Model<R>,
    gen_ids: &[NodeId],
    adam: &mut Adam<R>,
    labeled: &[PoseSample<R>],
    batch: &[usize],
    norm: &NormStats<R>,
    rng: &mut Rng,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x2 = tape.leaf(batch2d(labeled, batch, norm));
    let y3 = tape.leaf(batch3d(labeled, batch, norm));
    let pred = model.generate(&mut tape, &bound, x2, None, Phase::Train, rng)?;
    let est = losses::loss_est(&mut tape, pred, y3)?;
    let breakdown = LossBreakdown {
        est: to_f64(tape.value(est).item()),
        total: to_f64(tape.value(est).item()),
        ..Default::default()
    };
    let poisoned = apply_main_step(model, ParamGroup::Generator, gen_ids, adam, &tape, est)?;
    Ok(StepOutput {
        breakdown,
        disc_loss: 0.0,
        poisoned,
    })
}

#[allow(clippy::too_many_arguments)]
fn semi_step<R: Real>(
    model: &mut Model<R>,
    main_ids: &[NodeId],
    disc_ids: &[NodeId],
    adam_main: &mut Adam<R>,
    adam_disc: &mut Adam<R>,
    labeled: &[PoseSample<R>],
    batch: &[usize],
    unlabeled: &[PoseSample<R>],
    ul_batch: &[usize],
    norm: &NormStats<R>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    ul_rng: &mut Rng,
) -> Result<StepOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x2 = tape.leaf(batch2d(labeled, batch, norm));
    let y3 = tape.leaf(batch3d(labeled, batch, norm));
    let (est, perc, rec, _f2d_l, h3d_l) =
        supervised_terms(model, &mut tape, &bound, x2, y3, rng)?;

    // Unlabeled branch: encode, predict, re-encode the prediction.
    let x2_ul = tape.leaf(batch2d(unlabeled, ul_batch, norm));
    let f2d_ul = model.encode2d(&mut tape, &bound, x2_ul, Phase::Train, ul_rng)?;
    let reencode_input = match cfg.reencode_source {
        ReencodeSource::Generator => {
            model.generate(&mut tape, &bound, x2_ul, Some(f2d_ul), Phase::Train, ul_rng)?
        }
        ReencodeSource::Decoder => {
            model.decode(&mut tape, &bound, f2d_ul, Phase::Train, ul_rng)?
        }
    };
    let h3d_ul = if cfg.detach_reencoder {
        let frozen = model.bind_enc3d_frozen(&mut tape);
        model.encode3d_against(&mut tape, &frozen, reencode_input, Phase::Train, ul_rng)?
    } else {
        model.encode3d(&mut tape, &bound, reencode_input, Phase::Train, ul_rng)?
    };
    let fake_logits = model.discriminate(&mut tape, &bound.discriminator, f2d_ul)?;
    let adv = losses::loss_adversarial(&mut tape, fake_logits)?;
    let perc_ul = losses::loss_perceptual(&mut tape, f2d_ul, h3d_ul)?;
    let total = losses::total_semi(&mut tape, &cfg.weights, est, perc, rec, adv, perc_ul)?;
    let breakdown = losses::breakdown(&tape, est, perc, rec, Some(adv), Some(perc_ul), total);

    // Detach the features for the discriminator's own update before the
    // main step changes any parameters.
    let real_features = tape.value(h3d_l).clone();
    let fake_features = tape.value(f2d_ul).clone();

    let poisoned =
        apply_main_step(model, ParamGroup::Main, main_ids, adam_main, &tape, total)?;
    if poisoned {
        return Ok(StepOutput {
            breakdown,
            disc_loss: 0.0,
            poisoned,
        });
    }

    // Discriminator updates on detached features: real = labeled 3D-path
    // features, fake = unlabeled 2D-path features.
    let mut disc_loss = 0.0;
    for _ in 0..cfg.disc_ratio {
        let mut dtape = Tape::new();
        let dbound = model.bind_discriminator(&mut dtape);
        let real_id = dtape.leaf(real_features.clone());
        let fake_id = dtape.leaf(fake_features.clone());
        let real_logits = model.discriminate(&mut dtape, &dbound, real_id)?;
        let fake_logits = model.discriminate(&mut dtape, &dbound, fake_id)?;
        let dloss = losses::loss_discriminator(&mut dtape, real_logits, fake_logits)?;
        disc_loss = to_f64(dtape.value(dloss).item());
        if !disc_loss.is_finite() {
            return Ok(StepOutput {
                breakdown,
                disc_loss,
                poisoned: true,
            });
        }
        // The discriminator's own leaves occupy ids 0..k on this tape.
        let grads = dtape.backward(dloss);
        let grad_list: Vec<Tensor<R>> = (0..disc_ids.len())
            .map(|k| grads.wrt(NodeId::from_index(k), &dtape))
            .collect();
        let mut params = model.params_mut(ParamGroup::Discriminator);
        match adam_disc.step(&mut params, &grad_list) {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                log::error!("{msg}");
                return Ok(StepOutput {
                    breakdown,
                    disc_loss,
                    poisoned: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(StepOutput {
        breakdown,
        disc_loss,
        poisoned: false,
    })
}
