use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strider_core::descriptors::DESCRIPTOR_LEN;
use strider_core::nn::{DescriptorMode, Policy, PolicyConfig, ACTION_LEN, OBS_LEN};
use strider_core::randomization::DrConfig;
use strider_core::robot_model::{generate_walker, RobotModel, WalkerFamily};
use strider_core::sim::{EnvConfig, RewardConfig};
use strider_core::trainer::*;
use strider_core::unified_space::ActionMask;

fn tiny_policy(mode: DescriptorMode, n_emb: usize, seed: u64) -> Policy<f64> {
    let cfg = PolicyConfig {
        actor_hidden: vec![6, 5],
        critic_hidden: vec![6],
        estimator_hidden: vec![4, 3],
        descriptor_mode: mode,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Policy::new(cfg, n_emb, &mut rng);
    // push the output layer away from its tiny init so every path carries gradient
    for w in &mut p.actor.layers.last_mut().unwrap().w {
        *w = rng.random_range(-0.5..0.5);
    }
    for v in p.log_std.iter_mut().flatten() {
        *v = rng.random_range(-1.5..-0.2);
    }
    p
}

fn random_batch(p: &Policy<f64>, n: usize, n_emb: usize, seed: u64) -> MiniBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |s: f64| rng.random_range(-s..s);
    let obs: Vec<f64> = (0..n * OBS_LEN).map(|_| u(1.0)).collect();
    let desc: Vec<f64> = (0..n * DESCRIPTOR_LEN).map(|_| u(1.0)).collect();
    let embodiment: Vec<usize> = (0..n).map(|i| i % n_emb).collect();
    let mut actions = Vec::new();
    let mut old = Vec::new();
    let mask = ActionMask::whole32();
    for j in 0..n {
        let o = &obs[j * OBS_LEN..(j + 1) * OBS_LEN];
        let d = &desc[j * DESCRIPTOR_LEN..(j + 1) * DESCRIPTOR_LEN];
        let mean = p.actor.apply(&p.actor_input(o, d, 1), 1);
        let a: Vec<f64> = mean.iter().map(|m| m + u(0.3)).collect();
        let lp = strider_core::nn::gaussian_log_prob(&a, &mean, &p.log_std[embodiment[j]], &mask);
        // ratios spread around 1, mostly inside the clip band
        old.push(lp + u(0.15));
        actions.extend(a);
    }
    MiniBatch {
        obs,
        desc,
        actions,
        old_log_probs: old,
        advantages: (0..n).map(|_| u(2.0)).collect(),
        returns: (0..n).map(|_| u(2.0)).collect(),
        base_velocity: (0..2 * n).map(|_| u(1.0)).collect(),
        embodiment,
    }
}

/// Central differences on a sample of coordinates of every tensor.
fn max_fd_error(mode: DescriptorMode, seed: u64, per_tensor: usize) -> f64 {
    let n_emb = 2;
    let p = tiny_policy(mode, n_emb, seed);
    let mb = random_batch(&p, 7, n_emb, seed + 100);
    let w = [0.7, 0.3];
    let sig = [0, 1];
    let mask = ActionMask::whole32();
    let c = LossCoeffs::default();
    let (_, grad) = ppo_loss(&p, &mb, &w, &sig, &mask, &c);
    let g: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (t, gt) in g.iter().enumerate() {
        for _ in 0..per_tensor.min(gt.len()) {
            let i = rng.random_range(0..gt.len());
            let mut q = p.clone();
            q.params_mut()[t][i] += eps;
            let lp = ppo_loss(&q, &mb, &w, &sig, &mask, &c).0.total;
            q.params_mut()[t][i] -= 2.0 * eps;
            let lm = ppo_loss(&q, &mb, &w, &sig, &mask, &c).0.total;
            let fd = (lp - lm) / (2.0 * eps);
            let err = (fd - gt[i]).abs() / fd.abs().max(gt[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = max_fd_error(DescriptorMode::Privileged, seed, 40);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
    let e = max_fd_error(DescriptorMode::Observable, 11, 40);
    assert!(e < 1e-4, "observable: {e}");
}

#[test]
fn zero_weight_embodiment_contributes_nothing() {
    let p = tiny_policy(DescriptorMode::Privileged, 2, 4);
    let mut mb = random_batch(&p, 6, 2, 5);
    mb.embodiment = vec![1; 6];
    let (rep, g) = ppo_loss(&p, &mb, &[1.0, 0.0], &[0, 1], &ActionMask::whole32(), &LossCoeffs::default());
    assert_eq!(rep.total, 0.0);
    assert!(g.slices().iter().all(|s| s.iter().all(|v| *v == 0.0)));
}

#[test]
fn noise_vectors_only_see_their_own_embodiment() {
    let p = tiny_policy(DescriptorMode::Privileged, 3, 6);
    let mut mb = random_batch(&p, 8, 3, 7);
    mb.embodiment = vec![0, 2, 0, 2, 0, 2, 0, 2];
    let (_, g) = ppo_loss(&p, &mb, &[1.0, 1.0, 1.0], &[0, 1, 2], &ActionMask::whole32(), &LossCoeffs::default());
    assert!(g.log_std[1].iter().all(|v| *v == 0.0));
    assert!(g.log_std[0].iter().any(|v| *v != 0.0));
    assert!(g.log_std[2].iter().any(|v| *v != 0.0));
}

#[test]
fn repeated_steps_on_a_frozen_batch_decrease_the_loss() {
    let mut p = tiny_policy(DescriptorMode::Privileged, 2, 8);
    let mb = random_batch(&p, 16, 2, 9);
    let mut adam = Adam::for_policy(&mut p);
    let args = ([0.6, 1.0], [0, 1], ActionMask::whole32(), LossCoeffs::default());
    let mut last = ppo_loss(&p, &mb, &args.0, &args.1, &args.2, &args.3).0.total;
    for _ in 0..5 {
        let (_, g) = ppo_loss(&p, &mb, &args.0, &args.1, &args.2, &args.3);
        adam.step(p.params_mut(), &g.slices(), 1e-3);
        let now = ppo_loss(&p, &mb, &args.0, &args.1, &args.2, &args.3).0.total;
        assert!(now < last, "{now} >= {last}");
        last = now;
    }
}

fn walkers() -> Vec<RobotModel> {
    vec![
        generate_walker(&WalkerFamily::biped(), 1).unwrap(),
        generate_walker(&WalkerFamily::quadruped_pair(2), 2).unwrap(),
    ]
}

fn tiny_trainer_cfg() -> TrainerConfig {
    TrainerConfig {
        num_envs: 4,
        horizon: 8,
        epochs: 10,
        minibatches: 2,
        update_epochs: 2,
        descriptor_samples: 4,
        policy: PolicyConfig {
            actor_hidden: vec![16],
            critic_hidden: vec![16],
            estimator_hidden: vec![8],
            ..Default::default()
        },
        ..Default::default()
    }
}

fn trainer(seed: u64) -> Trainer<f64> {
    Trainer::new(
        &tiny_trainer_cfg(),
        &EnvConfig::default(),
        &DrConfig::default(),
        &RewardConfig::default(),
        walkers(),
        seed,
    )
    .unwrap()
}

#[test]
fn rollout_shape_and_embodiment_blocks() {
    let mut t = trainer(3);
    let b = collect_rollouts(&t.state.policy, &mut t.pool, 8, &[0, 1]);
    assert_eq!(b.len(), 32);
    assert_eq!(b.obs.len(), 32 * OBS_LEN);
    assert_eq!(b.actions.len(), 32 * ACTION_LEN);
    let ids: Vec<usize> = t.pool.slots.iter().map(|s| s.embodiment).collect();
    assert_eq!(ids, vec![0, 0, 1, 1]);
    assert!(b.embodiment.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn env_counts_are_balanced() {
    for n_envs in 3..40 {
        for n_emb in 1..=3.min(n_envs) {
            let mut count = vec![0; n_emb];
            for k in 0..n_envs {
                count[embodiment_of(k, n_envs, n_emb)] += 1;
            }
            assert!(count.iter().max().unwrap() - count.iter().min().unwrap() <= 1);
        }
    }
}

#[test]
fn same_seed_same_metrics() {
    let run = |seed| {
        let mut t = trainer(seed);
        (0..2).flat_map(|_| t.epoch().rows).map(|r| r.to_csv()).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
}

#[test]
fn update_leaves_absent_noise_vectors_alone() {
    let mut t = Trainer::<f64>::new(
        &TrainerConfig { num_envs: 2, ..tiny_trainer_cfg() },
        &EnvConfig::default(),
        &DrConfig::default(),
        &RewardConfig::default(),
        walkers(),
        9,
    )
    .unwrap();
    let mut b = collect_rollouts(&t.state.policy, &mut t.pool, 8, &[0, 1]);
    // keep only embodiment 0's transitions
    b.embodiment.iter_mut().for_each(|e| *e = 0);
    let before = t.state.policy.log_std[1].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lr = 3e-4;
    let rep = ppo_update(
        &mut t.state.policy,
        &mut t.state.adam,
        &mut lr,
        &b,
        &[1.0, 1.0],
        &[0, 1],
        &ActionMask::whole32(),
        &t.cfg.ppo(),
        &mut rng,
    );
    assert!(!rep.non_finite);
    assert_eq!(t.state.policy.log_std[1], before);
}

#[test]
fn non_finite_loss_keeps_previous_parameters() {
    let mut t = trainer(2);
    let mut b = collect_rollouts(&t.state.policy, &mut t.pool, 8, &[0, 1]);
    b.rewards[3] = f64::NAN;
    let before = t.state.policy.clone();
    let mut lr = 3e-4;
    let rep = ppo_update(
        &mut t.state.policy,
        &mut t.state.adam,
        &mut lr,
        &b,
        &[1.0, 1.0],
        &[0, 1],
        &ActionMask::whole32(),
        &t.cfg.ppo(),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    assert!(rep.non_finite);
    assert_eq!(t.state.policy, before);
}

proptest! {
    #[test]
    fn weights_order_range_and_shift(r in prop::collection::vec(-100.0f64..100.0, 1..8), c in -50.0f64..50.0) {
        let w = compute_embodiment_weights(&r, 1e-8);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let ws = compute_embodiment_weights(&shifted, 1e-8);
        for i in 0..r.len() {
            prop_assert!((0.0..=1.0).contains(&w[i]));
            prop_assert!((w[i] - ws[i]).abs() < 1e-6);
            for j in 0..r.len() {
                if r[i] < r[j] - 1e-6 {
                    prop_assert!(w[i] > w[j]);
                }
            }
        }
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let i_min = r.iter().position(|x| *x == lo).unwrap();
        prop_assert_eq!(w[i_min], 1.0);
    }
}
