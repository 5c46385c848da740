//! Few-shot joint optimisation of the screen pose and the gaze adapter.

mod adam;
mod config;
mod loss;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::{tau, LossWeights, TrainConfig};
pub use loss::{
    fit_alignment, loss_flip, loss_main, loss_uncertainty, pack, pseudo_label_with_jacobian, unpack, Evaluation,
    FlipTarget, FlipTargets, LiveAlignment, LossTerm, Model, Objective, ParamVec, PointJacobian, DEAD_ZONE,
    N_PARAMS,
};

use crate::adapter::GazeAdapter;
use crate::alignment::AlignmentTransform;
use crate::dataset::GazeSample;
use crate::error::{Error, Result};
use crate::projection::{ScreenPoint, ScreenPose};
use crate::pseudolabel::{label_record, TrajectoryLog};

/// Losses and state at the first optimiser step of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub tau: f64,
    pub loss_total: f64,
    pub loss_main: f64,
    pub loss_flip: f64,
    pub loss_unc: f64,
    pub n_invalid: usize,
    pub pose: ScreenPose,
    pub adapter: GazeAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLosses {
    pub total: f64,
    pub main: f64,
    pub flip: f64,
    pub unc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_ids: Vec<u64>,
    pub epochs: Vec<EpochRecord>,
    pub pose: ScreenPose,
    pub adapter: GazeAdapter,
    pub alignment: AlignmentTransform,
    pub final_losses: FinalLosses,
    #[serde(skip)]
    pub trajectory: TrajectoryLog,
}

impl TrainReport {
    /// One row per epoch: `epoch,lr,tau,loss_total,loss_main,loss_flip,loss_unc,n_invalid`.
    pub fn write_loss_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "epoch",
            "lr",
            "tau",
            "loss_total",
            "loss_main",
            "loss_flip",
            "loss_unc",
            "n_invalid",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.lr.to_string(),
                e.tau.to_string(),
                e.loss_total.to_string(),
                e.loss_main.to_string(),
                e.loss_flip.to_string(),
                e.loss_unc.to_string(),
                e.n_invalid.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` distinct samples from `pool`, in pool order, using `seed`.
pub fn select_subset<'a>(pool: &[&'a GazeSample], n: usize, seed: u64) -> Result<Vec<&'a GazeSample>> {
    if pool.len() < n {
        return Err(Error::InsufficientData(format!(
            "{n} training samples requested, only {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i]).collect())
}

struct Snapshot<'a> {
    epoch: u32,
    step: u32,
    pose: &'a ScreenPose,
    adapter: &'a GazeAdapter,
}

impl Snapshot<'_> {
    fn error(&self, what: &str) -> Error {
        let snapshot = serde_json::json!({
            "what": what,
            "pose": self.pose,
            "adapter": self.adapter,
        })
        .to_string();
        Error::NonFiniteLoss {
            epoch: self.epoch,
            step: self.step,
            snapshot,
        }
    }
}

fn objective<'a>(
    batch: &'a [&'a GazeSample],
    config: &TrainConfig,
    tau: f64,
    alignment: &'a AlignmentTransform,
    detached: &'a [Option<ScreenPoint>],
) -> Objective<'a> {
    Objective {
        batch,
        flip_targets: if config.detach_pseudo_labels {
            FlipTargets::Detached(detached)
        } else {
            FlipTargets::Live {
                fallback: config.use_alignment.then_some(alignment),
            }
        },
        n_jitter: config.n_jitter,
        tau,
        weights: config.weights(),
        origin_mode: config.origin_mode,
    }
}

/// Samples `config.n_samples` from `pool` with `config.seed` and trains on them.
pub fn train(pool: &[&GazeSample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let batch = select_subset(pool, config.n_samples, config.seed)?;
    train_batch(&batch, config)
}

/// Trains on exactly `batch`, ignoring `config.n_samples` and `config.seed`.
pub fn train_batch(batch: &[&GazeSample], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty training batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.n_jitter() < config.n_jitter) {
        return Err(Error::InsufficientData(format!(
            "sample {} has {} jitter variants, config needs {}",
            s.sample_id(),
            s.n_jitter(),
            config.n_jitter
        )));
    }
    let scale = config.translation_scale_mm;
    let weights = config.weights();
    let mut theta = pack(&config.init_pose, &GazeAdapter::identity(), scale);
    let mut adam = Adam::new(config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut alignment = AlignmentTransform::identity();
    let mut trajectory = TrajectoryLog::new();
    let mut epochs = Vec::with_capacity(config.epochs as usize);
    let mut detached: Vec<Option<ScreenPoint>> = vec![None; batch.len()];

    for epoch in 1..=config.epochs {
        let lr = config.lr_schedule(epoch);
        let tau = tau(epoch);
        for step in 0..config.steps_per_epoch {
            let (pose, adapter) = unpack(&theta, scale);
            let snap = Snapshot {
                epoch,
                step,
                pose: &pose,
                adapter: &adapter,
            };
            if !pose.is_finite() || !adapter.is_finite() {
                return Err(snap.error("non-finite parameters"));
            }
            let model = Model::new(&pose, &adapter, scale);
            if config.detach_pseudo_labels && step == 0 {
                let live = Objective {
                    flip_targets: FlipTargets::Live {
                        fallback: config.use_alignment.then_some(&alignment),
                    },
                    weights: LossWeights {
                        flip: 0.0,
                        unc: 0.0,
                        ..weights
                    },
                    ..objective(batch, config, tau, &alignment, &detached)
                }
                .evaluate(&model)?;
                if let Some(t) = live.alignment {
                    alignment = t;
                }
                for (slot, res) in detached.iter_mut().zip(&live.labels) {
                    *slot = res.as_ref().ok().copied();
                }
            }
            let ev = objective(batch, config, tau, &alignment, &detached).evaluate(&model)?;
            if !ev.total.is_finite() || !ev.grad.iter().all(|g| g.is_finite()) {
                return Err(snap.error("non-finite loss or gradient"));
            }
            if let Some(t) = ev.alignment {
                alignment = t;
            }
            if step == 0 {
                if config.detach_pseudo_labels {
                    for (s, q) in batch.iter().zip(&detached) {
                        let res = q.ok_or(Error::RayParallelToScreen { dot: 0.0 });
                        trajectory.record(&label_record(s.sample_id(), epoch, &res))?;
                    }
                } else {
                    for (s, res) in batch.iter().zip(&ev.labels) {
                        trajectory.record(&label_record(s.sample_id(), epoch, res))?;
                    }
                }
                log::debug!(
                    "epoch {epoch}: lr {lr} total {:.4} main {:.4} flip {:.4} unc {:.4}",
                    ev.total,
                    ev.main,
                    ev.flip,
                    ev.unc
                );
                epochs.push(EpochRecord {
                    epoch,
                    lr,
                    tau,
                    loss_total: ev.total,
                    loss_main: ev.main,
                    loss_flip: ev.flip,
                    loss_unc: ev.unc,
                    n_invalid: ev.n_invalid_main + ev.n_invalid_flip,
                    pose,
                    adapter,
                });
            }
            let mut grad = ev.grad;
            if !config.learn_pose {
                grad.fixed_rows_mut::<6>(0).fill(0.0);
            }
            adam.step(&mut theta, &grad, lr);
        }
        let (_, mut adapter) = unpack(&theta, scale);
        if adapter.delta.norm() >= std::f64::consts::PI {
            adapter.wrap_rotation();
            theta.fixed_rows_mut::<3>(6).copy_from(&adapter.delta);
        }
    }

    let (pose, adapter) = unpack(&theta, scale);
    let model = Model::new(&pose, &adapter, scale);
    let live = Objective {
        flip_targets: FlipTargets::Live {
            fallback: config.use_alignment.then_some(&alignment),
        },
        ..objective(batch, config, tau(config.epochs), &alignment, &detached)
    };
    let ev = live.evaluate(&model)?;
    if let Some(t) = ev.alignment {
        alignment = t;
    }

    Ok(TrainReport {
        config: config.clone(),
        train_ids: batch.iter().map(|s| s.sample_id()).collect(),
        epochs,
        pose,
        adapter,
        alignment,
        final_losses: FinalLosses {
            total: ev.total,
            main: ev.main,
            flip: ev.flip,
            unc: ev.unc,
        },
        trajectory,
    })
}
