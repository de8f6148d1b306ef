//! Multi-embodiment PPO with return-based loss weights, per-embodiment
//! exploration noise and a command curriculum.

mod gae;
mod ppo;
mod rollout;
mod weights;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, normalize_per_group};
pub use ppo::{clip_grad_norm, ppo_loss, ppo_update, Adam, LossCoeffs, LossReport, MiniBatch, PpoSettings, UpdateReport};
pub use rollout::{collect_rollouts, embodiment_of, EnvPool, EnvSlot, RolloutBatch};
pub use weights::{compute_embodiment_weights, ReturnTracker};

use crate::descriptors::{compute_descriptor, DescriptorStats};
use crate::nn::{Policy, PolicyConfig};
use crate::randomization::{sample_variant, DrConfig};
use crate::robot_model::RobotModel;
use crate::scalar::Scalar;
use crate::sim::{EnvConfig, EpisodeStats, RewardConfig};
use crate::unified_space::{build_mapping, ActionMask};

const TRAINER_STREAM: u64 = 1 << 40;
const INIT_STREAM: u64 = 1 << 41;
const RECENT_EPISODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub num_envs: usize,
    pub epochs: usize,
    /// Control steps per environment per epoch.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub update_epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub adaptive_lr: bool,
    pub target_kl: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub estimator_coef: f64,
    pub max_grad_norm: f64,
    pub return_decay: f64,
    pub weight_eps: f64,
    /// Lower bound on every loss weight.
    pub weight_floor: f64,
    /// Return-based loss weights; off gives every embodiment weight 1.
    pub reweight: bool,
    /// One noise vector per embodiment; off shares a single vector.
    pub per_embodiment_sigma: bool,
    /// Fraction of the epochs over which the command range grows to full.
    pub ramp_fraction: f64,
    /// Variants per robot used to fit the descriptor standardization.
    pub descriptor_samples: usize,
    pub checkpoint_every: usize,
    pub policy: PolicyConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_envs: 256,
            epochs: 2000,
            horizon: 24,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            update_epochs: 4,
            minibatches: 4,
            learning_rate: 3e-4,
            lr_min: 1e-5,
            lr_max: 1e-3,
            adaptive_lr: true,
            target_kl: 0.01,
            value_coef: 0.5,
            entropy_coef: 0.005,
            estimator_coef: 1.0,
            max_grad_norm: 1.0,
            return_decay: 0.99,
            weight_eps: 1e-8,
            weight_floor: 0.0,
            reweight: true,
            per_embodiment_sigma: true,
            ramp_fraction: 0.3,
            descriptor_samples: 64,
            checkpoint_every: 100,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_envs == 0 || self.horizon == 0 || self.update_epochs == 0 || self.minibatches == 0 {
            return Err("trainer.num_envs, horizon, update_epochs and minibatches must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err("trainer.gamma and trainer.lambda must lie in [0, 1]".into());
        }
        if !(self.learning_rate > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err("trainer learning rates must be positive with lr_min <= lr_max".into());
        }
        if !(0.0..=1.0).contains(&self.return_decay) || !(0.0..=1.0).contains(&self.weight_floor) {
            return Err("trainer.return_decay and trainer.weight_floor must lie in [0, 1]".into());
        }
        if !(self.ramp_fraction >= 0.0 && self.clip > 0.0) {
            return Err("trainer.ramp_fraction must be >= 0 and trainer.clip > 0".into());
        }
        self.policy.validate()
    }

    pub fn ppo(&self) -> PpoSettings {
        PpoSettings {
            coeffs: LossCoeffs {
                clip: self.clip,
                value: self.value_coef,
                entropy: self.entropy_coef,
                estimator: self.estimator_coef,
            },
            gamma: self.gamma,
            lambda: self.lambda,
            update_epochs: self.update_epochs,
            minibatches: self.minibatches,
            target_kl: self.target_kl,
            adaptive_lr: self.adaptive_lr,
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn ramp_epochs(&self) -> usize {
        (self.ramp_fraction * self.epochs as f64).round() as usize
    }
}

/// `min(1, 0.5 + 0.5 * epoch / ramp)`.
pub fn advance_curriculum(epoch: usize, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return 1.0;
    }
    (0.5 + 0.5 * epoch as f64 / ramp_epochs as f64).min(1.0)
}

/// Descriptor standardization fitted on nominal and randomized variants.
pub fn fit_descriptor_stats(robots: &[RobotModel], dr: &DrConfig, samples: usize, seed: u64) -> DescriptorStats {
    let mut rows = Vec::new();
    for (r, m) in robots.iter().enumerate() {
        let Ok(map) = build_mapping(m) else { continue };
        rows.push(compute_descriptor(m, &map).into_vec());
        if dr.enabled {
            for k in 0..samples {
                let v = sample_variant(m, dr, seed ^ ((r as u64) << 32 | k as u64));
                rows.push(compute_descriptor(&v.model, &map).into_vec());
            }
        }
    }
    DescriptorStats::fit(rows.iter().map(|r| r.as_slice()))
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub policy: Policy<T>,
    pub adam: Adam<T>,
    pub epoch: usize,
    pub curriculum_scale: f64,
    pub lr: f64,
    pub returns: ReturnTracker,
    pub weights: Vec<f64>,
    pub desc_stats: DescriptorStats,
}

impl<T: Scalar> TrainState<T> {
    pub fn fresh(cfg: &TrainerConfig, n_embodiments: usize, desc_stats: DescriptorStats, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let n_sigma = if cfg.per_embodiment_sigma { n_embodiments } else { 1 };
        let mut policy = Policy::new(cfg.policy.clone(), n_sigma, &mut rng);
        let adam = Adam::for_policy(&mut policy);
        TrainState {
            policy,
            adam,
            epoch: 0,
            curriculum_scale: advance_curriculum(0, cfg.ramp_epochs()),
            lr: cfg.learning_rate,
            returns: ReturnTracker::new(n_embodiments, cfg.return_decay),
            weights: vec![1.0; n_embodiments],
            desc_stats,
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub embodiment: String,
    pub mean_return: f64,
    pub mean_ep_len_norm: f64,
    pub w: f64,
    pub sigma_mean: f64,
    pub curriculum_scale: f64,
    pub lr: f64,
    pub kl: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "epoch,embodiment,mean_return,mean_ep_len_norm,w,sigma_mean,curriculum_scale,lr,kl";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.embodiment,
            self.mean_return,
            self.mean_ep_len_norm,
            self.w,
            self.sigma_mean,
            self.curriculum_scale,
            self.lr,
            self.kl
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub rows: Vec<MetricsRow>,
    pub update: UpdateReport,
    pub episodes: Vec<(usize, EpisodeStats)>,
}

/// A training run: state plus the environments it collects from.
pub struct Trainer<T> {
    pub cfg: TrainerConfig,
    pub env_cfg: EnvConfig,
    pub robots: Vec<RobotModel>,
    pub state: TrainState<T>,
    pub pool: EnvPool<T>,
    pub seed: u64,
    /// Command curriculum length in epochs.
    pub ramp_epochs: usize,
    sigma_of: Vec<usize>,
    recent: Vec<VecDeque<EpisodeStats>>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run from scratch.
    pub fn new(
        cfg: &TrainerConfig,
        env_cfg: &EnvConfig,
        dr: &DrConfig,
        reward: &RewardConfig,
        robots: Vec<RobotModel>,
        seed: u64,
    ) -> Result<Self, String> {
        let stats = fit_descriptor_stats(&robots, dr, cfg.descriptor_samples, seed);
        let state = TrainState::fresh(cfg, robots.len(), stats, seed);
        Self::with_state(cfg, env_cfg, dr, reward, robots, state, seed)
    }

    /// Run continuing from an existing state.
    pub fn with_state(
        cfg: &TrainerConfig,
        env_cfg: &EnvConfig,
        dr: &DrConfig,
        reward: &RewardConfig,
        robots: Vec<RobotModel>,
        state: TrainState<T>,
        seed: u64,
    ) -> Result<Self, String> {
        cfg.validate()?;
        env_cfg.validate()?;
        dr.validate()?;
        reward.validate()?;
        let n = robots.len();
        let n_sigma = state.policy.n_embodiments();
        let sigma_of: Vec<usize> = if cfg.per_embodiment_sigma {
            if n_sigma != n {
                return Err(format!("{n_sigma} noise vectors for {n} embodiments"));
            }
            (0..n).collect()
        } else {
            vec![0; n]
        };
        if state.returns.value.len() != n {
            return Err(format!("return tracker covers {} embodiments, not {n}", state.returns.value.len()));
        }
        let mut pool = EnvPool::new(&robots, cfg.num_envs, env_cfg, dr, reward, state.desc_stats.clone(), seed)?;
        pool.set_command_scale(state.curriculum_scale);
        Ok(Trainer {
            cfg: cfg.clone(),
            env_cfg: env_cfg.clone(),
            ramp_epochs: cfg.ramp_epochs(),
            robots,
            state,
            pool,
            seed,
            sigma_of,
            recent: vec![VecDeque::new(); n],
        })
    }

    pub fn mask(&self) -> ActionMask {
        self.pool.mask()
    }

    pub fn sigma_index(&self, embodiment: usize) -> usize {
        self.sigma_of[embodiment]
    }

    /// Mean return and normalized length over the last completed episodes.
    pub fn recent_summary(&self, embodiment: usize) -> (f64, f64) {
        let r = &self.recent[embodiment];
        if r.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = r.len() as f64;
        let limit = self.env_cfg.episode_limit as f64;
        (
            r.iter().map(|e| e.ret).sum::<f64>() / n,
            r.iter().map(|e| e.length as f64 / limit).sum::<f64>() / n,
        )
    }

    /// Collects one batch, updates, and advances the curriculum.
    pub fn epoch(&mut self) -> EpochReport {
        let scale = advance_curriculum(self.state.epoch, self.ramp_epochs);
        self.state.curriculum_scale = scale;
        self.pool.set_command_scale(scale);

        let batch = collect_rollouts(&self.state.policy, &mut self.pool, self.cfg.horizon, &self.sigma_of);
        for &(e, ep) in &batch.episodes {
            self.state.returns.record(e, ep.ret);
            let r = &mut self.recent[e];
            if r.len() == RECENT_EPISODES {
                r.pop_front();
            }
            r.push_back(ep);
        }
        self.state.weights = if self.cfg.reweight {
            self.state.returns.weights(self.cfg.weight_eps, self.cfg.weight_floor)
        } else {
            vec![1.0; self.robots.len()]
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(TRAINER_STREAM + self.state.epoch as u64);
        let mask = self.mask();
        let update = ppo_update(
            &mut self.state.policy,
            &mut self.state.adam,
            &mut self.state.lr,
            &batch,
            &self.state.weights,
            &self.sigma_of,
            &mask,
            &self.cfg.ppo(),
            &mut rng,
        );
        self.state.policy.obs_norm.update(&batch.obs);

        let rows = (0..self.robots.len())
            .map(|e| {
                let (ret, len) = self.recent_summary(e);
                let sigma = self.state.policy.sigma(self.sigma_of[e]);
                let sigma_mean = mask.slots().map(|k| sigma[k].as_f64()).sum::<f64>() / mask.count().max(1) as f64;
                MetricsRow {
                    epoch: self.state.epoch,
                    embodiment: self.robots[e].name.clone(),
                    mean_return: ret,
                    mean_ep_len_norm: len,
                    w: self.state.weights[e],
                    sigma_mean,
                    curriculum_scale: scale,
                    lr: update.lr,
                    kl: update.kl,
                }
            })
            .collect();
        self.state.epoch += 1;
        EpochReport {
            rows,
            update,
            episodes: batch.episodes,
        }
    }
}
