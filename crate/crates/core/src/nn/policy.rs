//! Actor, privileged critic and velocity estimator with per-embodiment
//! exploration noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::norm::RunningNorm;
use crate::descriptors::DESCRIPTOR_LEN;
use crate::roster::NUM_SLOTS;
use crate::scalar::Scalar;
use crate::sim::{FRAME_LEN, HISTORY_LEN};
use crate::unified_space::ActionMask;

/// Stacked observation length.
pub const OBS_LEN: usize = FRAME_LEN * HISTORY_LEN;
pub const ACTION_LEN: usize = NUM_SLOTS;
pub const LOG_STD_MAX: f64 = 0.0;

pub fn log_std_min() -> f64 {
    0.05f64.ln()
}

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// Where the embodiment descriptor is visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorMode {
    /// Critic only.
    #[default]
    Privileged,
    /// Critic and actor.
    Observable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub estimator_hidden: Vec<usize>,
    pub init_std: f64,
    pub descriptor_mode: DescriptorMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            actor_hidden: vec![256, 128],
            critic_hidden: vec![256, 128],
            estimator_hidden: vec![128, 64],
            init_std: 0.8,
            descriptor_mode: DescriptorMode::Privileged,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, h) in [
            ("actor_hidden", &self.actor_hidden),
            ("critic_hidden", &self.critic_hidden),
            ("estimator_hidden", &self.estimator_hidden),
        ] {
            if h.is_empty() || h.contains(&0) {
                return Err(format!("policy.{name} needs at least one nonzero layer"));
            }
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(format!("policy.init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    pub fn actor_in(&self) -> usize {
        match self.descriptor_mode {
            DescriptorMode::Privileged => OBS_LEN,
            DescriptorMode::Observable => OBS_LEN + DESCRIPTOR_LEN,
        }
    }
}

fn sizes(n_in: usize, hidden: &[usize], n_out: usize) -> Vec<usize> {
    let mut s = vec![n_in];
    s.extend_from_slice(hidden);
    s.push(n_out);
    s
}

/// Log-std clamped to its allowed range.
pub fn clamp_log_std<T: Scalar>(v: T) -> T {
    v.max(T::lit(log_std_min())).min(T::lit(LOG_STD_MAX))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub cfg: PolicyConfig,
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub estimator: Mlp<T>,
    /// One vector per training embodiment.
    pub log_std: Vec<Vec<T>>,
    pub obs_norm: RunningNorm,
}

/// Batched inference output.
#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput<T> {
    pub mean: Vec<T>,
    pub value: Vec<T>,
    pub estimate: Vec<T>,
}

/// Gradient with the same shape as [`Policy`]'s trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad<T> {
    pub actor: Mlp<T>,
    pub critic: Mlp<T>,
    pub estimator: Mlp<T>,
    pub log_std: Vec<Vec<T>>,
}

impl<T: Scalar> PolicyGrad<T> {
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for net in [&self.actor, &self.critic, &self.estimator] {
            out.extend(net.tensors().into_iter().map(|t| t.2));
        }
        out.extend(self.log_std.iter().map(|v| v.as_slice()));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.actor.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out.extend(self.estimator.tensors_mut());
        out.extend(self.log_std.iter_mut().map(|v| v.as_mut_slice()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> Policy<T> {
    pub fn new(cfg: PolicyConfig, n_embodiments: usize, rng: &mut impl Rng) -> Self {
        let actor = Mlp::new(&sizes(cfg.actor_in(), &cfg.actor_hidden, ACTION_LEN), 0.01, rng);
        let critic = Mlp::new(&sizes(OBS_LEN + DESCRIPTOR_LEN, &cfg.critic_hidden, 1), 1.0, rng);
        let estimator = Mlp::new(&sizes(OBS_LEN, &cfg.estimator_hidden, 2), 1.0, rng);
        let ls = clamp_log_std(T::lit(cfg.init_std.ln()));
        Policy {
            log_std: vec![vec![ls; ACTION_LEN]; n_embodiments],
            actor,
            critic,
            estimator,
            obs_norm: RunningNorm::new(OBS_LEN),
            cfg,
        }
    }

    pub fn n_embodiments(&self) -> usize {
        self.log_std.len()
    }

    pub fn zero_grad(&self) -> PolicyGrad<T> {
        PolicyGrad {
            actor: self.actor.zeros_like(),
            critic: self.critic.zeros_like(),
            estimator: self.estimator.zeros_like(),
            log_std: vec![vec![T::zero(); ACTION_LEN]; self.n_embodiments()],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.actor.tensors_mut();
        out.extend(self.critic.tensors_mut());
        out.extend(self.estimator.tensors_mut());
        out.extend(self.log_std.iter_mut().map(|v| v.as_mut_slice()));
        out
    }

    pub fn clamp_log_std(&mut self) {
        for v in self.log_std.iter_mut().flatten() {
            *v = clamp_log_std(*v);
        }
    }

    /// Adds a fresh noise vector at `sigma` (clamped) and returns its id.
    pub fn push_embodiment(&mut self, sigma: f64) -> usize {
        self.log_std.push(vec![clamp_log_std(T::lit(sigma.ln())); ACTION_LEN]);
        self.log_std.len() - 1
    }

    pub fn sigma(&self, embodiment: usize) -> Vec<T> {
        self.log_std[embodiment].iter().map(|v| v.exp()).collect()
    }

    pub fn normalized(&self, obs: &[T]) -> Vec<T> {
        self.obs_norm.normalize(obs)
    }

    /// Actor input rows from normalized observations and descriptors.
    pub fn actor_input(&self, obs_n: &[T], desc: &[T], batch: usize) -> Vec<T> {
        match self.cfg.descriptor_mode {
            DescriptorMode::Privileged => obs_n.to_vec(),
            DescriptorMode::Observable => concat_rows(obs_n, OBS_LEN, desc, DESCRIPTOR_LEN, batch),
        }
    }

    pub fn critic_input(&self, obs_n: &[T], desc: &[T], batch: usize) -> Vec<T> {
        concat_rows(obs_n, OBS_LEN, desc, DESCRIPTOR_LEN, batch)
    }

    /// Mean action, value and velocity estimate for raw observations.
    pub fn act(&self, obs: &[T], desc: &[T], batch: usize) -> ActOutput<T> {
        let obs_n = self.normalized(obs);
        ActOutput {
            mean: self.actor.apply(&self.actor_input(&obs_n, desc, batch), batch),
            value: self.critic.apply(&self.critic_input(&obs_n, desc, batch), batch),
            estimate: self.estimator.apply(&obs_n, batch),
        }
    }

    /// Mean action and noise scale of one embodiment.
    pub fn forward_actor(&self, obs: &[T], desc: &[T], embodiment: usize) -> (Vec<T>, Vec<T>) {
        let obs_n = self.normalized(obs);
        let mean = self.actor.apply(&self.actor_input(&obs_n, desc, 1), 1);
        (mean, self.sigma(embodiment))
    }

    pub fn estimate_base_velocity(&self, obs: &[T]) -> [T; 2] {
        let e = self.estimator.apply(&self.normalized(obs), 1);
        [e[0], e[1]]
    }
}

fn concat_rows<T: Scalar>(a: &[T], na: usize, b: &[T], nb: usize, batch: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * (na + nb));
    for r in 0..batch {
        out.extend_from_slice(&a[r * na..(r + 1) * na]);
        out.extend_from_slice(&b[r * nb..(r + 1) * nb]);
    }
    out
}

/// Diagonal Gaussian log density over the masked slots.
pub fn gaussian_log_prob<T: Scalar>(action: &[T], mean: &[T], log_std: &[T], mask: &ActionMask) -> T {
    mask.slots()
        .map(|k| {
            let z = (action[k] - mean[k]) / log_std[k].exp();
            -T::lit(0.5) * z * z - log_std[k] - T::lit(HALF_LN_TAU)
        })
        .sum()
}

/// Entropy of the masked diagonal Gaussian.
pub fn gaussian_entropy<T: Scalar>(log_std: &[T], mask: &ActionMask) -> T {
    mask.slots().map(|k| log_std[k] + T::lit(0.5 + HALF_LN_TAU)).sum()
}

/// Draws an action; slots outside the mask are 0 and carry no density.
pub fn sample_action<T: Scalar>(mean: &[T], log_std: &[T], mask: &ActionMask, rng: &mut impl Rng) -> (Vec<T>, T) {
    let mut a = vec![T::zero(); ACTION_LEN];
    for k in mask.slots() {
        let n: f64 = rng.sample(StandardNormal);
        a[k] = mean[k] + log_std[k].exp() * T::lit(n);
    }
    let lp = gaussian_log_prob(&a, mean, log_std, mask);
    (a, lp)
}
