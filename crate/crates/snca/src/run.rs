//! The work behind each command: training with on-disk outputs, rollouts
//! with seed overrides, and multi-run evaluation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use snca_core::loss::{rotinv_loss_fft, LossConfig, Regime};
use snca_core::model::{rollout, Variant};
use snca_core::rng::split;
use snca_core::seeding::{make_seed, rotate_seed_pair, vary_seed_diameter, SeedMode, SeedSpec};
use snca_core::target::{mirror_plan, resample, TargetPattern};
use snca_core::train::{StepReport, Trainer};
use snca_core::Tensor;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig, TargetSource};
use crate::render::{render, write_gif, RenderSpec};
use crate::targets::{load_target, TargetError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("invalid configuration: {0}")]
    Invalid(snca_core::Error),
    #[error("training aborted: {0}")]
    Abort(snca_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] snca_core::Error),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Target(_) | RunError::Invalid(_) => 2,
            RunError::Abort(_) => 3,
            _ => 1,
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One CSV row of the loss history: step, mean loss and the first sample's
/// selected rotation (empty for the pixel-wise loss).
pub fn history_row(r: &StepReport) -> [String; 3] {
    [
        r.step.to_string(),
        format!("{:?}", r.loss),
        r.best_rotation.first().map_or(String::new(), |v| format!("{v:?}")),
    ]
}

pub struct TrainOutcome {
    pub trainer: Trainer<f32>,
    pub history: Vec<StepReport>,
    pub final_checkpoint: PathBuf,
}

/// Builds a trainer for `cfg`, resolving the target and seed position.
pub fn build_trainer(cfg: &RunConfig) -> Result<(Trainer<f32>, RunConfig), RunError> {
    let target = load_target(&cfg.target, cfg.target_pad, cfg.aux)?;
    let mut resolved = cfg.clone();
    let train = cfg.resolved_train(target.height(), target.width());
    resolved.seed_center = Some(train.seed.center);
    resolved.train = train.clone();
    let trainer = Trainer::new(train, target).map_err(RunError::Invalid)?;
    Ok((trainer, resolved))
}

/// Runs training, writing `loss.csv`, periodic and final checkpoints, and a
/// GIF of a rollout from the final parameters into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path, mut progress: impl FnMut(&StepReport)) -> Result<TrainOutcome, RunError> {
    let (mut trainer, resolved) = build_trainer(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| output_err(out_dir, e))?;
    let csv_path = out_dir.join("loss.csv");
    let mut csv = csv::Writer::from_path(&csv_path).map_err(|e| output_err(&csv_path, e))?;
    csv.write_record(["step", "loss", "best_rotation"])
        .map_err(|e| output_err(&csv_path, e))?;

    let every = resolved.train.checkpoint_every;
    let mut io_error = None;
    let result = trainer.run(|t, r| {
        progress(r);
        let mut step_io = || -> Result<(), RunError> {
            csv.write_record(history_row(r)).map_err(|e| output_err(&csv_path, e))?;
            if every > 0 && r.step % every == 0 {
                let p = out_dir.join(format!("ckpt_{:06}.snca", r.step));
                Checkpoint::from_trainer(t, &resolved).save(&p)?;
            }
            Ok(())
        };
        if let Err(e) = step_io() {
            io_error = Some(e);
            return Err(snca_core::Error::Contract("output failure".into()));
        }
        Ok(())
    });
    csv.flush().map_err(|e| output_err(&csv_path, e))?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let history = result.map_err(|e| match e {
        snca_core::Error::NonFinite { .. } => RunError::Abort(e),
        other => RunError::Core(other),
    })?;

    let final_checkpoint = out_dir.join("final.snca");
    let ckpt = Checkpoint::from_trainer(&trainer, &resolved);
    ckpt.save(&final_checkpoint)?;
    let spec = RenderSpec {
        stride: resolved.gif_stride,
        scale: resolved.render_scale,
        ..RenderSpec::default()
    };
    let frames = rollout_frames(&ckpt, &resolved.train.seed, resolved.gif_steps, resolved.train.rng_seed, &spec)?;
    let gif = out_dir.join("final.gif");
    write_gif(&gif, frames.into_iter().map(|f| f.1).collect(), 40).map_err(|e| output_err(&gif, e))?;
    Ok(TrainOutcome {
        trainer,
        history,
        final_checkpoint,
    })
}

/// Seed overrides accepted by the rollout command.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedOverrides {
    /// Turn the seed configuration by this many degrees.
    pub rotation_deg: Option<f64>,
    /// New distance between the two seeds, in cells.
    pub diameter: Option<f64>,
    pub single: bool,
}

/// The checkpoint's training seed with `ov` applied. Rotation turns a seed
/// pair about its midpoint; for the angle variant it also shifts the
/// initial steering value, which is the only way to turn a single seed.
pub fn seed_with_overrides(ckpt: &Checkpoint, ov: &SeedOverrides) -> Result<SeedSpec, RunError> {
    let mut spec = ckpt.config.train.seed.clone();
    if ov.single {
        spec.mode = SeedMode::Single;
    }
    if let Some(d) = ov.diameter {
        spec = vary_seed_diameter(&spec, d)?;
    }
    if let Some(deg) = ov.rotation_deg {
        let delta = deg.to_radians();
        let angle = ckpt.config.train.model.variant == Variant::Angle;
        if spec.mode == SeedMode::Two {
            spec = rotate_seed_pair(&spec, delta)?;
        } else if !angle {
            return Err(RunError::Core(snca_core::Error::Contract(
                "a single seed of the gradient variant has no orientation to rotate".into(),
            )));
        }
        if angle {
            spec.angle += delta;
        }
    }
    Ok(spec)
}

/// Rolls the checkpoint's model out from `seed` for `steps` steps and
/// renders frames at step 0 and every multiple of `spec.stride`.
pub fn rollout_frames(
    ckpt: &Checkpoint,
    seed: &SeedSpec,
    steps: usize,
    rng_seed: u64,
    spec: &RenderSpec,
) -> Result<Vec<(usize, image::RgbaImage)>, RunError> {
    let (states, _) = rollout_states(ckpt, seed, steps, rng_seed, spec.stride)?;
    let model = &ckpt.config.train.model;
    states
        .into_iter()
        .map(|(step, s)| Ok((step, render(&s, model, spec)?)))
        .collect()
}

/// Recorded states of a rollout plus the final state.
pub fn rollout_states(
    ckpt: &Checkpoint,
    seed: &SeedSpec,
    steps: usize,
    rng_seed: u64,
    stride: usize,
) -> Result<(Vec<(usize, Tensor<f32>)>, Tensor<f32>), RunError> {
    let model = &ckpt.config.train.model;
    let start: Tensor<f32> = make_seed(seed, model, ckpt.grid.0, ckpt.grid.1)?;
    if steps == 0 {
        return Ok((vec![(0, start.clone())], start));
    }
    // Stream 1 keeps rollouts independent of the training generator.
    let mut rng = split(rng_seed, 1);
    let traj = rollout(&start, &ckpt.params, model, steps, &mut rng, stride)?;
    Ok((traj.frames, traj.final_state))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub run: usize,
    pub loss: f64,
    pub best_rotation: f64,
    /// Rotation-invariant loss of the left-right mirrored final state.
    pub reflection_loss: f64,
}

/// Target for evaluating `ckpt`, padded like its training target and with
/// the polar table the rotation-invariant loss needs.
pub fn eval_target(ckpt: &Checkpoint, source: &TargetSource) -> Result<TargetPattern, RunError> {
    let cfg = &ckpt.config;
    let mut target = load_target(source, cfg.target_pad, cfg.aux)?;
    if (target.height(), target.width()) != ckpt.grid {
        return Err(CheckpointError::Mismatch(format!(
            "target grid {}x{} differs from the checkpoint grid {}x{}",
            target.height(),
            target.width(),
            ckpt.grid.0,
            ckpt.grid.1
        ))
        .into());
    }
    target.prepare_polar_default(cfg.train.a_bins, cfg.train.loss.sharpen)?;
    Ok(target)
}

/// Final rotation-invariant loss, selected rotation and mirrored-state loss
/// of `runs` independent rollouts; run `i` uses generator stream `i + 1` of
/// `rng_seed`, which also draws the seed angle when training randomized it.
pub fn evaluate(
    ckpt: &Checkpoint,
    target: &TargetPattern,
    seed: &SeedSpec,
    runs: usize,
    steps: usize,
    rng_seed: u64,
) -> Result<Vec<EvalRow>, RunError> {
    let loss_cfg: LossConfig = ckpt.config.train.loss;
    let mirror = Arc::new(mirror_plan(target.height(), target.width(), target.center.1));
    let model = &ckpt.config.train.model;
    let mut rows = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut rng = split(rng_seed, run as u64 + 1);
        let mut spec = seed.clone();
        if ckpt.config.train.random_seed_angle && model.variant == Variant::Angle {
            spec.angle = rng.gen::<f64>() * std::f64::consts::TAU;
        }
        let start: Tensor<f32> = make_seed(&spec, model, ckpt.grid.0, ckpt.grid.1)?;
        let end = if steps == 0 {
            start
        } else {
            rollout(&start, &ckpt.params, model, steps, &mut rng, steps)?.final_state
        };
        let direct = rotinv_loss_fft(&end, target, &loss_cfg)?;
        let mirrored = rotinv_loss_fft(&resample(&end, &mirror)?, target, &loss_cfg)?;
        rows.push(EvalRow {
            run,
            loss: direct.value,
            best_rotation: direct.best_rotation[0],
            reflection_loss: mirrored.value,
        });
    }
    Ok(rows)
}

pub fn write_eval_csv<W: std::io::Write>(out: W, rows: &[EvalRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "loss", "best_rotation", "reflection_loss"])?;
    for r in rows {
        w.write_record([
            r.run.to_string(),
            format!("{:?}", r.loss),
            format!("{:?}", r.best_rotation),
            format!("{:?}", r.reflection_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Default regime-appropriate evaluation seed for a checkpoint.
pub fn eval_seed(ckpt: &Checkpoint) -> SeedSpec {
    let seed = ckpt.config.train.seed.clone();
    match ckpt.config.train.regime {
        Regime::SingleSeedRotInv => SeedSpec {
            mode: SeedMode::Single,
            ..seed
        },
        Regime::TwoSeedL2 => seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use snca_core::model::ModelConfig;

    fn untrained(variant: Variant, regime: Regime) -> Checkpoint {
        let mut cfg = RunConfig::default();
        cfg.target = TargetSource::Builtin("toy".into());
        cfg.train.model = ModelConfig {
            variant,
            channels: 6,
            hidden: 4,
            steering_channel: 5,
            ..ModelConfig::default()
        };
        cfg.train.regime = regime;
        cfg.train.a_bins = 32;
        if regime == Regime::SingleSeedRotInv {
            cfg.train.seed.mode = SeedMode::Single;
        }
        let (trainer, resolved) = build_trainer(&cfg).unwrap();
        Checkpoint::from_trainer(&trainer, &resolved)
    }

    #[test]
    fn untrained_model_scores_the_seed() {
        let ckpt = untrained(Variant::Gradient, Regime::SingleSeedRotInv);
        let target = eval_target(&ckpt, &ckpt.config.target).unwrap();
        let seed = eval_seed(&ckpt);
        let start: Tensor<f32> = make_seed(&seed, &ckpt.config.train.model, ckpt.grid.0, ckpt.grid.1).unwrap();
        let expect = rotinv_loss_fft(&start, &target, &ckpt.config.train.loss).unwrap().value;
        let rows = evaluate(&ckpt, &target, &seed, 3, 5, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.loss == expect));
    }

    #[test]
    fn seed_overrides() {
        let ckpt = untrained(Variant::Angle, Regime::TwoSeedL2);
        let base = ckpt.config.train.seed.clone();
        let turned = seed_with_overrides(
            &ckpt,
            &SeedOverrides {
                rotation_deg: Some(90.0),
                diameter: Some(4.0),
                single: false,
            },
        )
        .unwrap();
        assert!((turned.orientation - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((turned.angle - base.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(turned.separation, 4.0);

        let single = SeedOverrides {
            rotation_deg: Some(30.0),
            single: true,
            ..SeedOverrides::default()
        };
        assert_eq!(seed_with_overrides(&ckpt, &single).unwrap().mode, SeedMode::Single);
        let grad = untrained(Variant::Gradient, Regime::TwoSeedL2);
        assert!(seed_with_overrides(&grad, &single).is_err());
    }
}
