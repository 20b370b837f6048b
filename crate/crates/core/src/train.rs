//! Pool-based training with backpropagation through random-length rollouts.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::autodiff::Tape;
use crate::loss::{total_loss, total_loss_on_tape, LossConfig, Regime};
use crate::model::{step_on_tape, ModelConfig, ModelParams, ParamVars};
use crate::optim::{normalize_gradient, scheduled_lr, Adam, AdamConfig};
use crate::rng::{seeded, NcaRng, RngState};
use crate::seeding::{make_seed, SeedMode, SeedSpec};
use crate::target::TargetPattern;
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub regime: Regime,
    pub loss: LossConfig,
    /// Angle bins of the polar lattice used by the rotation-invariant loss.
    pub a_bins: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub rollout_min: usize,
    pub rollout_max: usize,
    pub learning_rate: f64,
    /// Fraction of `total_steps` after which the learning rate is halved.
    pub lr_decay_at: f64,
    pub total_steps: u64,
    pub grad_norm: bool,
    pub seed: SeedSpec,
    /// Give every fresh angle-variant seed a uniformly random steering value.
    pub random_seed_angle: bool,
    /// Damage augmentation; not implemented and must stay off.
    pub damage: bool,
    pub rng_seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            regime: Regime::TwoSeedL2,
            loss: LossConfig::default(),
            a_bins: 256,
            batch_size: 8,
            pool_size: 256,
            rollout_min: 64,
            rollout_max: 96,
            learning_rate: 1e-3,
            lr_decay_at: 0.67,
            total_steps: 10_000,
            grad_norm: true,
            seed: SeedSpec::default(),
            random_seed_angle: false,
            damage: false,
            rng_seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.pool_size < self.batch_size {
            return Err(Error::Config(format!(
                "pool_size {} is smaller than batch_size {}",
                self.pool_size, self.batch_size
            )));
        }
        if self.rollout_min == 0 || self.rollout_min > self.rollout_max {
            return Err(Error::Config(format!(
                "rollout range [{}, {}] is empty or starts at zero",
                self.rollout_min, self.rollout_max
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) {
            return bad("lr_decay_at must lie in [0, 1]");
        }
        if self.damage {
            return bad("damage augmentation is not supported");
        }
        let want = match self.regime {
            Regime::TwoSeedL2 => SeedMode::Two,
            Regime::SingleSeedRotInv => SeedMode::Single,
        };
        if self.seed.mode != want {
            return Err(Error::Config(format!(
                "regime {} needs a {} seed",
                self.regime.name(),
                want.name()
            )));
        }
        Ok(())
    }
}

/// Seed centred on a `height x width` grid, matching the regime.
pub fn centered_seed(regime: Regime, height: usize, width: usize, separation: f64) -> SeedSpec {
    let (r, c) = ((height / 2) as f64, (width / 2) as f64);
    match regime {
        Regime::TwoSeedL2 => SeedSpec::pair(r, c, separation, 0.0),
        Regime::SingleSeedRotInv => SeedSpec::single(r, c),
    }
}

/// Persistent states reused as rollout starting points.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool<T> {
    pub states: Vec<Tensor<T>>,
    /// Rollout steps accumulated since each entry was last reseeded.
    pub ages: Vec<u64>,
}

impl<T: Scalar> SamplePool<T> {
    pub fn filled(seed: &Tensor<T>, size: usize) -> Self {
        SamplePool {
            states: alloc::vec![seed.clone(); size],
            ages: alloc::vec![0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 1-based index of the finished step.
    pub step: u64,
    pub loss: f64,
    pub per_sample: Vec<f64>,
    /// Selected rotation per sample; empty for the pixel-wise loss.
    pub best_rotation: Vec<f64>,
    pub rollout_steps: usize,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub target: TargetPattern,
    pub params: ModelParams<T>,
    pub adam: Adam<T>,
    pub pool: SamplePool<T>,
    pub rng: NcaRng,
    /// Completed training steps.
    pub step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, mut target: TargetPattern) -> Result<Self> {
        cfg.validate()?;
        if cfg.model.aux_channels != target.aux_kind.channels() {
            return Err(Error::Config(format!(
                "model has {} auxiliary channels, target provides {}",
                cfg.model.aux_channels,
                target.aux_kind.channels()
            )));
        }
        if cfg.regime == Regime::SingleSeedRotInv {
            let fresh = target.polar.as_ref().map_or(true, |p| {
                p.grid.a_bins != cfg.a_bins || p.sharpen != cfg.loss.sharpen
            });
            if fresh {
                target.prepare_polar_default(cfg.a_bins, cfg.loss.sharpen)?;
            }
        }
        let mut rng = seeded(cfg.rng_seed);
        let params = ModelParams::<f64>::init(&cfg.model, &mut rng).cast::<T>();
        let adam = Adam::new(AdamConfig::default(), &params.arrays());
        let mut trainer = Trainer {
            pool: SamplePool {
                states: Vec::new(),
                ages: Vec::new(),
            },
            cfg,
            target,
            params,
            adam,
            rng,
            step: 0,
        };
        let mut states = Vec::with_capacity(trainer.cfg.pool_size);
        for _ in 0..trainer.cfg.pool_size {
            states.push(trainer.fresh_seed()?);
        }
        trainer.pool = SamplePool {
            ages: alloc::vec![0; states.len()],
            states,
        };
        Ok(trainer)
    }

    /// A new seed state; draws a steering value when random seed angles are on.
    pub fn fresh_seed(&mut self) -> Result<Tensor<T>> {
        let mut spec = self.cfg.seed.clone();
        if self.cfg.random_seed_angle {
            spec.angle = self.rng.gen::<f64>() * TAU;
        }
        make_seed(&spec, &self.cfg.model, self.target.height(), self.target.width())
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn non_finite(&self) -> Error {
        Error::NonFinite {
            step: self.step + 1,
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// One optimization step. On a non-finite loss or gradient nothing is
    /// updated and [`Error::NonFinite`] reports the step and generator position.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let cfg = self.cfg.clone();
        let idx = rand::seq::index::sample(&mut self.rng, cfg.pool_size, cfg.batch_size).into_vec();

        // Pool refresh: the worst sampled entry restarts from a seed.
        let mut worst = (0, f64::NEG_INFINITY);
        for (i, &p) in idx.iter().enumerate() {
            let l = total_loss(&self.pool.states[p], &self.target, cfg.model.aux_channels, cfg.regime, &cfg.loss)?.value;
            if l > worst.1 {
                worst = (i, l);
            }
        }
        let seed = self.fresh_seed()?;
        let mut starts: Vec<Tensor<T>> = idx.iter().map(|&p| self.pool.states[p].clone()).collect();
        starts[worst.0] = seed;

        let n = self.rng.gen_range(cfg.rollout_min..=cfg.rollout_max);
        let inv_batch = T::from_f64(1.0 / cfg.batch_size as f64);
        let mut grads: Vec<Tensor<T>> = self.params.arrays().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut per_sample = Vec::with_capacity(cfg.batch_size);
        let mut best_rotation = Vec::new();
        let mut finals = Vec::with_capacity(cfg.batch_size);
        for start in starts {
            let mut tape = Tape::new();
            let pv = ParamVars::leaves(&mut tape, &self.params);
            let mut s = tape.constant(start);
            for _ in 0..n {
                s = step_on_tape(&mut tape, s, &pv, &cfg.model, &mut self.rng)?;
            }
            let (loss, report) = total_loss_on_tape(&mut tape, s, &self.target, cfg.model.aux_channels, cfg.regime, &cfg.loss)?;
            if !report.value.is_finite() {
                return Err(self.non_finite());
            }
            per_sample.push(report.value);
            best_rotation.extend(report.best_rotation);
            let g = tape.backward(loss)?;
            for (acc, v) in grads.iter_mut().zip(pv.vars()) {
                for (a, d) in acc.data_mut().iter_mut().zip(g.get(v).data()) {
                    *a += *d * inv_batch;
                }
            }
            finals.push(tape.value(s).clone());
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(self.non_finite());
        }
        if cfg.grad_norm {
            grads.iter_mut().for_each(normalize_gradient);
        }
        let lr = scheduled_lr(cfg.learning_rate, self.step, cfg.total_steps, cfg.lr_decay_at);
        let mut arrays = self.params.arrays_mut();
        self.adam.step(&mut arrays, &grads, lr)?;

        for (k, (&p, state)) in idx.iter().zip(finals).enumerate() {
            self.pool.states[p] = state;
            self.pool.ages[p] = if k == worst.0 { n as u64 } else { self.pool.ages[p] + n as u64 };
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss: per_sample.iter().sum::<f64>() / per_sample.len() as f64,
            per_sample,
            best_rotation,
            rollout_steps: n,
            lr,
        })
    }

    /// Runs until `total_steps` steps are done, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepReport) -> Result<()>) -> Result<Vec<StepReport>> {
        let mut history = Vec::new();
        while self.step < self.cfg.total_steps {
            let report = self.train_step()?;
            on_step(self, &report)?;
            history.push(report);
        }
        Ok(history)
    }
}

/// Trains from scratch and returns the trainer with its loss history.
pub fn run_training<T: Scalar>(cfg: TrainConfig, target: TargetPattern) -> Result<(Trainer<T>, Vec<StepReport>)> {
    let mut trainer = Trainer::new(cfg, target)?;
    let history = trainer.run(|_, _| Ok(()))?;
    Ok((trainer, history))
}

/// Trailing moving average of `values` over `window` entries.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
