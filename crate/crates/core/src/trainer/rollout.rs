//! Batched environments and multi-embodiment rollout storage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptors::{compute_descriptor, DescriptorStats, DESCRIPTOR_LEN};
use crate::nn::{sample_action, Policy, ACTION_LEN, OBS_LEN};
use crate::randomization::DrConfig;
use crate::robot_model::RobotModel;
use crate::scalar::Scalar;
use crate::sim::{DoneReason, EnvConfig, EpisodeStats, RewardConfig, WalkerEnv};
use crate::unified_space::{build_mapping, ActionMask};

/// Stream offsets keep the environment, action and trainer streams apart.
const ACTION_STREAM: u64 = 1 << 32;

pub struct EnvSlot<T> {
    pub env: WalkerEnv<T>,
    pub embodiment: usize,
    rng: ChaCha8Rng,
    desc: Vec<T>,
}

/// A fixed set of environments, assigned to embodiments in contiguous
/// blocks whose sizes differ by at most one.
pub struct EnvPool<T> {
    pub slots: Vec<EnvSlot<T>>,
    pub stats: DescriptorStats,
    pub n_embodiments: usize,
}

/// Standardized descriptor of an environment's current variant.
fn descriptor_of<T: Scalar>(env: &WalkerEnv<T>, stats: &DescriptorStats) -> Vec<T> {
    let z = compute_descriptor(&env.variant().model, env.mapping());
    stats.standardize(z.z_e()).into_iter().map(T::lit).collect()
}

/// Embodiment of environment `k` out of `n_envs`.
pub fn embodiment_of(k: usize, n_envs: usize, n_embodiments: usize) -> usize {
    k * n_embodiments / n_envs
}

impl<T: Scalar> EnvPool<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        robots: &[RobotModel],
        n_envs: usize,
        env_cfg: &EnvConfig,
        dr: &DrConfig,
        reward: &RewardConfig,
        stats: DescriptorStats,
        seed: u64,
    ) -> Result<Self, String> {
        if robots.is_empty() {
            return Err("no embodiments to train on".into());
        }
        if n_envs < robots.len() {
            return Err(format!("{n_envs} environments cannot cover {} embodiments", robots.len()));
        }
        let mut mappings = Vec::new();
        for m in robots {
            mappings.push(build_mapping(m).map_err(|e| format!("{}: {e}", m.name))?);
        }
        let slots = (0..n_envs)
            .map(|k| {
                let e = embodiment_of(k, n_envs, robots.len());
                let env = WalkerEnv::new(
                    robots[e].clone(),
                    mappings[e].clone(),
                    env_cfg.clone(),
                    dr.clone(),
                    reward.clone(),
                    seed,
                    k as u64,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ACTION_STREAM + k as u64);
                let desc = descriptor_of(&env, &stats);
                EnvSlot {
                    env,
                    embodiment: e,
                    rng,
                    desc,
                }
            })
            .collect();
        Ok(EnvPool {
            slots,
            stats,
            n_embodiments: robots.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn set_command_scale(&mut self, scale: f64) {
        for s in &mut self.slots {
            s.env.set_command_scale(scale);
        }
    }

    pub fn set_mask(&mut self, mask: ActionMask) {
        for s in &mut self.slots {
            s.env.set_mask(mask);
        }
    }

    pub fn mask(&self) -> ActionMask {
        *self.slots[0].env.mask()
    }

    /// Stacked observations and descriptors of every environment.
    pub fn gather(&self) -> (Vec<T>, Vec<T>) {
        let mut obs = vec![T::zero(); self.len() * OBS_LEN];
        let mut desc = Vec::with_capacity(self.len() * DESCRIPTOR_LEN);
        for (s, o) in self.slots.iter().zip(obs.chunks_exact_mut(OBS_LEN)) {
            s.env.observation_into(o);
            desc.extend_from_slice(&s.desc);
        }
        (obs, desc)
    }
}

/// Transitions stored env-major: `(e, t)` at `e * horizon + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch<T> {
    pub n_envs: usize,
    pub horizon: usize,
    pub obs: Vec<T>,
    pub desc: Vec<T>,
    pub actions: Vec<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub rewards: Vec<T>,
    pub dones: Vec<bool>,
    pub reasons: Vec<Option<DoneReason>>,
    pub embodiment: Vec<usize>,
    pub base_velocity: Vec<T>,
    /// Value of the observation after the last step, per environment.
    pub bootstrap: Vec<T>,
    /// Completed episodes as `(embodiment, stats)` in completion order.
    pub episodes: Vec<(usize, EpisodeStats)>,
}

impl<T: Scalar> RolloutBatch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Runs every environment for `horizon` steps with stochastic actions.
/// `sigma_of[e]` selects the log-std vector of embodiment `e`.
pub fn collect_rollouts<T: Scalar>(
    policy: &Policy<T>,
    pool: &mut EnvPool<T>,
    horizon: usize,
    sigma_of: &[usize],
) -> RolloutBatch<T> {
    let n = pool.len();
    let total = n * horizon;
    let mut b = RolloutBatch {
        n_envs: n,
        horizon,
        obs: vec![T::zero(); total * OBS_LEN],
        desc: vec![T::zero(); total * DESCRIPTOR_LEN],
        actions: vec![T::zero(); total * ACTION_LEN],
        log_probs: vec![T::zero(); total],
        values: vec![T::zero(); total],
        rewards: vec![T::zero(); total],
        dones: vec![false; total],
        reasons: vec![None; total],
        embodiment: vec![0; total],
        base_velocity: vec![T::zero(); total * 2],
        bootstrap: vec![T::zero(); n],
        episodes: Vec::new(),
    };
    let stats = pool.stats.clone();
    for t in 0..horizon {
        let (obs, desc) = pool.gather();
        let out = policy.act(&obs, &desc, n);
        let mut actions = vec![T::zero(); n * ACTION_LEN];
        for (e, slot) in pool.slots.iter_mut().enumerate() {
            let i = e * horizon + t;
            let mean = &out.mean[e * ACTION_LEN..(e + 1) * ACTION_LEN];
            let ls = &policy.log_std[sigma_of[slot.embodiment]];
            let (a, lp) = sample_action(mean, ls, slot.env.mask(), &mut slot.rng);
            actions[e * ACTION_LEN..(e + 1) * ACTION_LEN].copy_from_slice(&a);
            b.obs[i * OBS_LEN..(i + 1) * OBS_LEN].copy_from_slice(&obs[e * OBS_LEN..(e + 1) * OBS_LEN]);
            b.desc[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
                .copy_from_slice(&desc[e * DESCRIPTOR_LEN..(e + 1) * DESCRIPTOR_LEN]);
            b.actions[i * ACTION_LEN..(i + 1) * ACTION_LEN].copy_from_slice(&a);
            b.log_probs[i] = lp;
            b.values[i] = out.value[e];
            b.embodiment[i] = slot.embodiment;
        }
        let results: Vec<_> = pool
            .slots
            .par_iter_mut()
            .zip(actions.par_chunks_exact(ACTION_LEN))
            .enumerate()
            .map(|(e, (slot, a))| {
                let est = [out.estimate[2 * e], out.estimate[2 * e + 1]];
                let r = slot.env.step(a, est);
                if r.done {
                    slot.env.reset_episode();
                    slot.desc = descriptor_of(&slot.env, &stats);
                }
                r
            })
            .collect();
        for (e, r) in results.into_iter().enumerate() {
            let i = e * horizon + t;
            b.rewards[i] = r.reward;
            b.dones[i] = r.done;
            b.reasons[i] = r.done_reason;
            b.base_velocity[2 * i] = r.base_velocity[0];
            b.base_velocity[2 * i + 1] = r.base_velocity[1];
            if let Some(ep) = r.episode {
                b.episodes.push((pool.slots[e].embodiment, ep));
            }
        }
    }
    let (obs, desc) = pool.gather();
    b.bootstrap = policy.act(&obs, &desc, n).value;
    b
}
