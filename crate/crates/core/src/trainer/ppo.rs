//! Weighted multi-embodiment PPO loss, its gradient, and the optimizer.

use rand::seq::SliceRandom;
use rand::Rng;

use super::gae::{compute_gae, normalize_per_group};
use super::rollout::RolloutBatch;
use crate::descriptors::DESCRIPTOR_LEN;
use crate::nn::{gaussian_entropy, gaussian_log_prob, Policy, PolicyGrad, ACTION_LEN, OBS_LEN};
use crate::scalar::Scalar;
use crate::unified_space::ActionMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoeffs {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub estimator: f64,
}

impl Default for LossCoeffs {
    fn default() -> Self {
        LossCoeffs {
            clip: 0.2,
            value: 0.5,
            entropy: 0.005,
            estimator: 1.0,
        }
    }
}

/// Row-major minibatch; observations are already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch<T> {
    pub obs: Vec<T>,
    pub desc: Vec<T>,
    pub actions: Vec<T>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
    pub base_velocity: Vec<T>,
    pub embodiment: Vec<usize>,
}

impl<T: Scalar> MiniBatch<T> {
    pub fn len(&self) -> usize {
        self.embodiment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embodiment.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted loss of each embodiment; 0 when absent from the batch.
    pub per_embodiment: Vec<f64>,
    /// Mean of `(r - 1) - ln r` over the batch.
    pub kl: f64,
}

/// `L_total = sum_i w_i L_i`, where `L_i` averages the clipped surrogate,
/// value and estimator errors over embodiment `i`'s transitions and
/// subtracts the entropy bonus of its noise vector.
pub fn ppo_loss<T: Scalar>(
    policy: &Policy<T>,
    mb: &MiniBatch<T>,
    weights: &[f64],
    sigma_of: &[usize],
    mask: &ActionMask,
    c: &LossCoeffs,
) -> (LossReport, PolicyGrad<T>) {
    let n = mb.len();
    let n_emb = weights.len();
    let mut count = vec![0usize; n_emb];
    for &e in &mb.embodiment {
        count[e] += 1;
    }
    let actor = policy.actor.forward(&policy.actor_input(&mb.obs, &mb.desc, n), n);
    let critic = policy.critic.forward(&policy.critic_input(&mb.obs, &mb.desc, n), n);
    let est = policy.estimator.forward(&mb.obs, n);

    let mut grad = policy.zero_grad();
    let mut d_mean = vec![T::zero(); n * ACTION_LEN];
    let mut d_value = vec![T::zero(); n];
    let mut d_est = vec![T::zero(); n * 2];
    let mut per = vec![0.0; n_emb];
    let mut kl = 0.0;
    let (lo, hi) = (T::lit(1.0 - c.clip), T::lit(1.0 + c.clip));

    for j in 0..n {
        let e = mb.embodiment[j];
        let scale = T::lit(weights[e] / count[e] as f64);
        let ls = &policy.log_std[sigma_of[e]];
        let mean = &actor.out[j * ACTION_LEN..(j + 1) * ACTION_LEN];
        let a = &mb.actions[j * ACTION_LEN..(j + 1) * ACTION_LEN];
        let log_ratio = gaussian_log_prob(a, mean, ls, mask) - mb.old_log_probs[j];
        let ratio = log_ratio.exp();
        let adv = mb.advantages[j];
        let clipped = ratio.max(lo).min(hi);
        let unclipped_active = ratio * adv <= clipped * adv;
        let surrogate = -(ratio * adv).min(clipped * adv);
        kl += (ratio - T::one() - log_ratio).as_f64();

        let v = critic.out[j];
        let v_err = v - mb.returns[j];
        let e_err = [est.out[2 * j] - mb.base_velocity[2 * j], est.out[2 * j + 1] - mb.base_velocity[2 * j + 1]];
        let l = surrogate + T::lit(c.value) * v_err * v_err
            + T::lit(c.estimator) * (e_err[0] * e_err[0] + e_err[1] * e_err[1]);
        per[e] += l.as_f64() / count[e] as f64;

        // d surrogate / d log p
        if unclipped_active {
            let g = -scale * adv * ratio;
            let dm = &mut d_mean[j * ACTION_LEN..(j + 1) * ACTION_LEN];
            let dls = &mut grad.log_std[sigma_of[e]];
            for k in mask.slots() {
                let inv_var = (-T::lit(2.0) * ls[k]).exp();
                let diff = a[k] - mean[k];
                dm[k] = g * diff * inv_var;
                dls[k] += g * (diff * diff * inv_var - T::one());
            }
        }
        d_value[j] = scale * T::lit(2.0 * c.value) * v_err;
        d_est[2 * j] = scale * T::lit(2.0 * c.estimator) * e_err[0];
        d_est[2 * j + 1] = scale * T::lit(2.0 * c.estimator) * e_err[1];
    }
    for e in 0..n_emb {
        if count[e] == 0 {
            continue;
        }
        let ls = &policy.log_std[sigma_of[e]];
        per[e] -= c.entropy * gaussian_entropy(ls, mask).as_f64();
        for k in mask.slots() {
            grad.log_std[sigma_of[e]][k] -= T::lit(weights[e] * c.entropy);
        }
    }
    policy.actor.backward(&actor, &d_mean, &mut grad.actor, false);
    policy.critic.backward(&critic, &d_value, &mut grad.critic, false);
    policy.estimator.backward(&est, &d_est, &mut grad.estimator, false);

    let total = per.iter().zip(weights).map(|(l, w)| l * w).sum();
    (
        LossReport {
            total,
            per_embodiment: per,
            kl: kl / n.max(1) as f64,
        },
        grad,
    )
}

/// Adam over a fixed list of parameter slices.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(shapes: &[usize]) -> Self {
        Adam {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_policy(p: &mut Policy<T>) -> Self {
        let shapes: Vec<usize> = p.params_mut().iter().map(|s| s.len()).collect();
        Self::new(&shapes)
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &[&[T]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer shape");
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = T::one() - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Scales the gradient to a global L2 norm of at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(g: &mut PolicyGrad<T>, max_norm: f64) -> f64 {
    let norm = g
        .slices()
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for sl in g.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoSettings {
    pub coeffs: LossCoeffs,
    pub gamma: f64,
    pub lambda: f64,
    pub update_epochs: usize,
    pub minibatches: usize,
    pub target_kl: f64,
    pub adaptive_lr: bool,
    pub lr_min: f64,
    pub lr_max: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub loss: f64,
    pub per_embodiment: Vec<f64>,
    pub kl: f64,
    pub lr: f64,
    /// Set when a non-finite loss or gradient aborted the update.
    pub non_finite: bool,
}

/// Copies rows `idx` of the batch into a minibatch.
fn gather<T: Scalar>(
    obs_n: &[T],
    b: &RolloutBatch<T>,
    adv: &[T],
    ret: &[T],
    idx: &[usize],
) -> MiniBatch<T> {
    let rows = |src: &[T], w: usize| -> Vec<T> {
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(&src[i * w..(i + 1) * w]);
        }
        out
    };
    MiniBatch {
        obs: rows(obs_n, OBS_LEN),
        desc: rows(&b.desc, DESCRIPTOR_LEN),
        actions: rows(&b.actions, ACTION_LEN),
        old_log_probs: rows(&b.log_probs, 1),
        advantages: rows(adv, 1),
        returns: rows(ret, 1),
        base_velocity: rows(&b.base_velocity, 2),
        embodiment: idx.iter().map(|&i| b.embodiment[i]).collect(),
    }
}

/// Several epochs of shuffled minibatch steps on one rollout batch. On a
/// non-finite loss the policy and optimizer are restored.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Scalar>(
    policy: &mut Policy<T>,
    adam: &mut Adam<T>,
    lr: &mut f64,
    batch: &RolloutBatch<T>,
    weights: &[f64],
    sigma_of: &[usize],
    mask: &ActionMask,
    s: &PpoSettings,
    rng: &mut impl Rng,
) -> UpdateReport {
    let (mut adv, ret) = compute_gae(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        &batch.bootstrap,
        batch.horizon,
        T::lit(s.gamma),
        T::lit(s.lambda),
    );
    normalize_per_group(&mut adv, &batch.embodiment);
    let obs_n = policy.normalized(&batch.obs);
    let saved = (policy.clone(), adam.clone(), *lr);

    let n = batch.len();
    let n_mb = s.minibatches.clamp(1, n.max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    let mut per = vec![0.0; weights.len()];
    let (mut loss, mut kl, mut steps) = (0.0, 0.0, 0usize);
    for _ in 0..s.update_epochs {
        idx.shuffle(rng);
        let mut pass_kl = 0.0;
        for k in 0..n_mb {
            let chunk = &idx[k * n / n_mb..(k + 1) * n / n_mb];
            if chunk.is_empty() {
                continue;
            }
            let mb = gather(&obs_n, batch, &adv, &ret, chunk);
            let (rep, mut grad) = ppo_loss(policy, &mb, weights, sigma_of, mask, &s.coeffs);
            if !rep.total.is_finite() || !grad.is_finite() {
                let (p, a, l) = saved;
                *policy = p;
                *adam = a;
                *lr = l;
                return UpdateReport {
                    loss: f64::NAN,
                    per_embodiment: vec![f64::NAN; weights.len()],
                    kl: f64::NAN,
                    lr: *lr,
                    non_finite: true,
                };
            }
            clip_grad_norm(&mut grad, s.max_grad_norm);
            adam.step(policy.params_mut(), &grad.slices(), *lr);
            policy.clamp_log_std();
            loss += rep.total;
            kl += rep.kl;
            pass_kl += rep.kl / n_mb as f64;
            for (p, l) in per.iter_mut().zip(&rep.per_embodiment) {
                *p += l;
            }
            steps += 1;
        }
        // the first minibatch of a batch always sees KL 0, so the rate is
        // adapted once per pass on the pass mean
        if s.adaptive_lr && s.target_kl > 0.0 {
            if pass_kl > 2.0 * s.target_kl {
                *lr = (*lr / 2.0).max(s.lr_min);
            } else if pass_kl < 0.5 * s.target_kl {
                *lr = (*lr * 2.0).min(s.lr_max);
            }
        }
    }
    let d = steps.max(1) as f64;
    UpdateReport {
        loss: loss / d,
        per_embodiment: per.iter().map(|p| p / d).collect(),
        kl: kl / d,
        lr: *lr,
        non_finite: false,
    }
}
