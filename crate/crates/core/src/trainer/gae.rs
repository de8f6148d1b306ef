//! Generalized advantage estimation.

use crate::scalar::Scalar;

/// Advantages and value targets for env-major rollouts: transition
/// `(e, t)` sits at `e * horizon + t`. `bootstrap[e]` is the value after the
/// last step. Nothing is bootstrapped across a done.
pub fn compute_gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    bootstrap: &[T],
    horizon: usize,
    gamma: T,
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert!(horizon > 0 && n % horizon == 0 && bootstrap.len() == n / horizon);
    let mut adv = vec![T::zero(); n];
    for (e, boot) in bootstrap.iter().enumerate() {
        let mut next_value = *boot;
        let mut next_adv = T::zero();
        for t in (0..horizon).rev() {
            let i = e * horizon + t;
            let live = if dones[i] { T::zero() } else { T::one() };
            let delta = rewards[i] + gamma * live * next_value - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let targets = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, targets)
}

/// Standardizes advantages within each group to mean 0, std 1.
pub fn normalize_per_group<T: Scalar>(adv: &mut [T], group: &[usize]) {
    let n_groups = group.iter().copied().max().map_or(0, |g| g + 1);
    for g in 0..n_groups {
        let idx: Vec<usize> = (0..adv.len()).filter(|&i| group[i] == g).collect();
        if idx.is_empty() {
            continue;
        }
        let n = T::from_usize_lossy(idx.len());
        let mean = idx.iter().map(|&i| adv[i]).sum::<T>() / n;
        let var = idx.iter().map(|&i| (adv[i] - mean) * (adv[i] - mean)).sum::<T>() / n;
        let sd = var.sqrt() + T::lit(1e-8);
        for &i in &idx {
            adv[i] = (adv[i] - mean) / sd;
        }
    }
}
