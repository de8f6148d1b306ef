//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 6-8 train full desk-scale policies (hours on one core) and run
//! only with `ACCEPTANCE_FULL=1`. Their artifacts go to `ACCEPTANCE_OUT`
//! (default `target/acceptance`); existing pretraining checkpoints there
//! are reused. `ACCEPTANCE_ONLY=1,4,9` restricts the run.
//! Failures are always printed; the exit status is non-zero on failure only
//! with `ACCEPTANCE_STRICT=1`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strider_core::checkpoint::Checkpoint;
use strider_core::config::RunConfig;
use strider_core::descriptors::{compute_descriptor, descriptor_distance, DescriptorStats, EmbodimentDescriptor, DESCRIPTOR_LEN};
use strider_core::eval::{evaluate, normalized_episode_length, tracking_errors, EvalConfig, EvalSummary, MetricError};
use strider_core::nn::{gaussian_log_prob, DescriptorMode, Policy, PolicyConfig, OBS_LEN};
use strider_core::randomization::{effective_ranges, sample_variant, DrConfig, EmbodimentVariant};
use strider_core::robot_model::{generate_walker, parse_model, ParseOptions, RobotModel, WalkerFamily};
use strider_core::roster::NUM_SLOTS;
use strider_core::sim::{Actuation, PhysicsParams, World};
use strider_core::trainer::{compute_embodiment_weights, ppo_loss, LossCoeffs, MetricsRow, MiniBatch, Trainer, TrainerConfig};
use strider_core::transfer::{adapt_checkpoint, compare_regimes, finetune, CompareConfig};
use strider_core::unified_space::{build_mapping, ActionMask};

type Outcome = Result<String, String>;

fn fixtures() -> Vec<RobotModel> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../robots");
    ["biped6.json", "quad12.json", "h1_like.json"]
        .iter()
        .map(|f| parse_model(&dir.join(f), ParseOptions::default()).expect("fixture parses"))
        .collect()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unified_round_trip() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut oracle_mismatch = 0;
    for m in fixtures() {
        let map = build_mapping(&m).map_err(|e| e.to_string())?;
        let n = m.n_joints();
        // dense selection matrix: one 1 per mapped slot row
        let mut dense = vec![vec![0.0; n]; NUM_SLOTS];
        for (slot, row) in dense.iter_mut().enumerate() {
            if let Some(p) = map.slot_to_phys[slot] {
                row[p] = 1.0;
            }
        }
        for _ in 0..1000 {
            let q: Vec<f64> = m.joints.iter().map(|j| rng.random_range(j.limits[0]..=j.limits[1])).collect();
            let env = map.phys_to_env(&q).map_err(|e| e.to_string())?;
            let back = map.env_to_phys(&env).map_err(|e| e.to_string())?;
            for (a, b) in q.iter().zip(&back) {
                worst = worst.max((a - b).abs());
            }
            for slot in 0..NUM_SLOTS {
                let mut v = 0.0;
                for p in 0..n {
                    v += dense[slot][p] * (m.joints[p].sign * (q[p] - m.joints[p].offset));
                }
                if v != env[slot] {
                    oracle_mismatch += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && oracle_mismatch == 0 && secs < 1.0,
        format!("max |q - back| = {worst:.1e} rad, {oracle_mismatch} oracle mismatches, {secs:.2} s"),
    )
}

fn weight_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let eps = 1e-8;
    let (mut worst, mut order_bad, mut shift_worst, mut range_bad) = (0.0f64, 0, 0.0f64, 0);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=8);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-500.0..500.0)).collect();
        let w = compute_embodiment_weights(&r, eps);
        let rmin = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let rmax = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            let direct = 1.0 - (r[i] - rmin) / (rmax - rmin + eps);
            worst = worst.max((direct - w[i]).abs());
            if !(0.0..=1.0).contains(&w[i]) {
                range_bad += 1;
            }
            for j in 0..n {
                if r[i] < r[j] && w[i] <= w[j] {
                    order_bad += 1;
                }
            }
        }
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        for (a, b) in w.iter().zip(compute_embodiment_weights(&shifted, eps)) {
            shift_worst = shift_worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-12 && order_bad == 0 && range_bad == 0 && shift_worst <= 1e-12,
        format!("max oracle error {worst:.1e}, shift error {shift_worst:.1e}, {order_bad} order and {range_bad} range violations"),
    )
}

fn random_policy(rng: &mut ChaCha8Rng, n_emb: usize) -> Policy<f64> {
    let hidden = |rng: &mut ChaCha8Rng| (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=8)).collect();
    let cfg = PolicyConfig {
        actor_hidden: hidden(rng),
        critic_hidden: hidden(rng),
        estimator_hidden: hidden(rng),
        descriptor_mode: if rng.random::<bool>() {
            DescriptorMode::Privileged
        } else {
            DescriptorMode::Observable
        },
        ..Default::default()
    };
    let mut p = Policy::new(cfg, n_emb, rng);
    for w in &mut p.actor.layers.last_mut().unwrap().w {
        *w = rng.random_range(-0.5..0.5);
    }
    for v in p.log_std.iter_mut().flatten() {
        *v = rng.random_range(-1.5..-0.2);
    }
    p
}

fn random_minibatch(p: &Policy<f64>, rng: &mut ChaCha8Rng, n: usize, n_emb: usize) -> MiniBatch<f64> {
    let mut u = |s: f64| rng.random_range(-s..s);
    let obs: Vec<f64> = (0..n * OBS_LEN).map(|_| u(1.0)).collect();
    let desc: Vec<f64> = (0..n * DESCRIPTOR_LEN).map(|_| u(1.0)).collect();
    let embodiment: Vec<usize> = (0..n).map(|i| i % n_emb).collect();
    let mask = ActionMask::whole32();
    let (mut actions, mut old) = (Vec::new(), Vec::new());
    for j in 0..n {
        let o = &obs[j * OBS_LEN..(j + 1) * OBS_LEN];
        let d = &desc[j * DESCRIPTOR_LEN..(j + 1) * DESCRIPTOR_LEN];
        let mean = p.actor.apply(&p.actor_input(o, d, 1), 1);
        let a: Vec<f64> = mean.iter().map(|m| m + u(0.3)).collect();
        old.push(gaussian_log_prob(&a, &mean, &p.log_std[embodiment[j]], &mask) + u(0.15));
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

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let eps = 1e-5;
    let mask = ActionMask::whole32();
    let c = LossCoeffs::default();
    for net in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + net);
        let n_emb = rng.random_range(1..=3);
        let p = random_policy(&mut rng, n_emb);
        let mb = random_minibatch(&p, &mut rng, 6, n_emb);
        let w: Vec<f64> = (0..n_emb).map(|_| rng.random_range(0.1..1.0)).collect();
        let sig: Vec<usize> = (0..n_emb).collect();
        let (_, grad) = ppo_loss(&p, &mb, &w, &sig, &mask, &c);
        let g: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
        for (k, gk) in g.iter().enumerate() {
            for _ in 0..gk.len().min(25) {
                let i = rng.random_range(0..gk.len());
                let mut q = p.clone();
                q.params_mut()[k][i] += eps;
                let lp = ppo_loss(&q, &mb, &w, &sig, &mask, &c).0.total;
                q.params_mut()[k][i] -= 2.0 * eps;
                let lm = ppo_loss(&q, &mb, &w, &sig, &mask, &c).0.total;
                let fd = (lp - lm) / (2.0 * eps);
                worst = worst.max((fd - gk[i]).abs() / fd.abs().max(gk[i].abs()).max(1e-6));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over 20 networks, {secs:.1} s"),
    )
}

fn physics() -> Outcome {
    let ms = fixtures();
    let m = &ms[0];
    let free = PhysicsParams {
        contact_enabled: false,
        ..Default::default()
    };
    let w = World::<f64>::new(m, 0.8, free.clone());
    let mut s = w.pose_state(m, [0.0, 5.0], 0.0, &m.nominal_pose);
    let zero = vec![0.0; m.n_joints()];
    while s.time < 1.0 - 1e-9 {
        w.step(&mut s, Actuation::Torque(&zero), [0.0, 0.0]);
    }
    let fall = s.bodies.iter().map(|b| (b.vel[1] + 9.81).abs()).fold(0.0, f64::max);

    let drift = PhysicsParams {
        gravity_enabled: false,
        ..free
    };
    let w = World::<f64>::new(m, 0.8, drift);
    let mut s = w.pose_state(m, [0.0, 1.0], 0.1, &m.nominal_pose);
    for (i, b) in s.bodies.iter_mut().enumerate() {
        b.vel = [0.3 * i as f64, -0.2];
        b.omega = 0.5 - 0.1 * i as f64;
    }
    let p0 = w.linear_momentum(&s);
    let mut momentum: f64 = 0.0;
    for _ in 0..100 {
        w.step(&mut s, Actuation::Torque(&zero), [0.0, 0.0]);
        let p = w.linear_momentum(&s);
        momentum = momentum.max((p[0] - p0[0]).abs()).max((p[1] - p0[1]).abs());
    }

    let mut residual: f64 = 0.0;
    let mut fallen = Vec::new();
    for m in &ms {
        let v = EmbodimentVariant::nominal(m, &DrConfig::disabled());
        let w = World::<f64>::from_variant(&v, PhysicsParams::default());
        let mut s = w.pose_state(m, [0.0, m.nominal_base_height], 0.0, &m.nominal_pose);
        let steps = (20.0 / PhysicsParams::default().control_dt()).round() as usize;
        for _ in 0..steps {
            w.step(&mut s, Actuation::PdTarget(&m.nominal_pose), [0.0, 0.0]);
            residual = residual.max(w.max_joint_residual(&s));
            let base = s.bodies[w.base()];
            if base.pos[1] < 0.5 * m.nominal_base_height || base.angle.abs() > 1.0 {
                fallen.push(m.name.clone());
                break;
            }
        }
    }
    check(
        fall <= 1e-12 && momentum <= 1e-9 && fallen.is_empty() && residual < 1e-3,
        format!(
            "free fall |v+9.81| {fall:.1e}, momentum drift {momentum:.1e}, fell {fallen:?}, max joint residual {:.3} mm",
            residual * 1e3
        ),
    )
}

fn dr_containment() -> Outcome {
    let r = |m: f64| effective_ranges(&DrConfig::with_multiplier(m));
    let nested = r(1.0).contained_in(&r(2.0)) && r(2.0).contained_in(&r(4.0));
    let mut doubling: f64 = 0.0;
    for ((_, a), (_, b)) in r(1.0).as_table().iter().zip(r(2.0).as_table().iter()) {
        let (ha, hb) = (0.5 * (a[1] - a[0]), 0.5 * (b[1] - b[0]));
        doubling = doubling.max((hb - 2.0 * ha).abs());
    }
    let m = &fixtures()[1];
    let mut outside = 0usize;
    for mult in [1.0, 2.0, 4.0] {
        let cfg = DrConfig::with_multiplier(mult);
        let e = effective_ranges(&cfg);
        let inside = |x: f64, r: [f64; 2]| x >= r[0] - 1e-12 && x <= r[1] + 1e-12;
        for seed in 0..100_000u64 / 3 + 1 {
            let v = sample_variant(m, &cfg, seed);
            for (a, b) in v.model.links.iter().zip(&m.links) {
                outside += usize::from(!inside(a.mass / b.mass, e.mass));
                outside += usize::from(!inside(a.inertia_com / b.inertia_com, e.inertia));
                let shift = (a.com_offset - b.com_offset) / b.length;
                let clamped = a.com_offset == 0.0 || a.com_offset == b.length;
                outside += usize::from(!clamped && !inside(shift, e.com_offset));
            }
            for (a, b) in v.model.joints.iter().zip(&m.joints) {
                outside += usize::from(!inside(a.kp / b.kp, e.kp));
                outside += usize::from(!inside(a.kd / b.kd, e.kd));
                outside += usize::from(!inside(a.tau_max / b.tau_max, e.tau_max));
            }
            outside += usize::from(!inside(v.friction, e.friction));
        }
    }
    check(
        nested && outside == 0 && doubling <= 1e-15,
        format!("nested {nested}, {outside} samples out of bounds over 1e5 variants, doubling error {doubling:.1e}"),
    )
}

/// (min inter-robot, max intra-robot) distance over 1000 variants per fixture.
fn separation(mult: f64, metric: impl Fn(&EmbodimentDescriptor, &EmbodimentDescriptor) -> f64) -> (f64, f64) {
    let cfg = DrConfig::with_multiplier(mult);
    let clouds: Vec<Vec<EmbodimentDescriptor>> = fixtures()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let map = build_mapping(m).expect("fixture maps");
            (0..1000u64)
                .map(|i| compute_descriptor(&sample_variant(m, &cfg, (k as u64) << 32 | i).model, &map))
                .collect()
        })
        .collect();
    let mut intra: f64 = 0.0;
    for c in &clouds {
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                intra = intra.max(metric(&c[i], &c[j]));
            }
        }
    }
    let mut inter = f64::INFINITY;
    for a in 0..clouds.len() {
        for b in a + 1..clouds.len() {
            for x in &clouds[a] {
                for y in &clouds[b] {
                    inter = inter.min(metric(x, y));
                }
            }
        }
    }
    (inter, intra)
}

fn descriptor_separation() -> Outcome {
    let (inter, intra) = separation(4.0, descriptor_distance);
    // diagnostics only: 1x raw and 4x in the standardized space the networks see
    let (i1, a1) = separation(1.0, descriptor_distance);
    let ms = fixtures();
    let cfg = DrConfig::with_multiplier(4.0);
    let fit: Vec<Vec<f64>> = ms
        .iter()
        .flat_map(|m| {
            let map = build_mapping(m).expect("fixture maps");
            let cfg = &cfg;
            (0..200u64).map(move |i| compute_descriptor(&sample_variant(m, cfg, 1 << 40 | i).model, &map).z_e().to_vec())
        })
        .collect();
    let stats = DescriptorStats::fit(fit.iter().map(|v| v.as_slice()));
    let std_dist = |a: &EmbodimentDescriptor, b: &EmbodimentDescriptor| {
        let (x, y) = (stats.standardize(a.z_e()), stats.standardize(b.z_e()));
        x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    let (is, as_) = separation(4.0, std_dist);
    check(
        inter > intra,
        format!(
            "raw 4x: min inter {inter:.1} vs max intra {intra:.1}; raw 1x: {i1:.1} vs {a1:.1}; standardized 4x: {is:.2} vs {as_:.2}"
        ),
    )
}

fn tiny_run() -> RunConfig {
    let mut run = RunConfig::desk_scale();
    run.trainer = TrainerConfig {
        num_envs: 9,
        horizon: 12,
        epochs: 4,
        descriptor_samples: 8,
        ..TrainerConfig::default()
    };
    run.trainer.policy.actor_hidden = vec![32];
    run.trainer.policy.critic_hidden = vec![32];
    run.trainer.policy.estimator_hidden = vec![16];
    run.env.episode_limit = 40;
    run
}

fn train_bytes(run: &RunConfig, seed: u64) -> (String, Vec<u8>) {
    let robots = run.resolve_robots(Path::new(".")).expect("preset robots");
    let names = robots.iter().map(|r| r.name.clone()).collect();
    let mut t = Trainer::<f32>::new(&run.trainer, &run.env, &run.dr, &run.reward, robots, seed).expect("trainer");
    let mut log = format!("{}\n", MetricsRow::HEADER);
    for _ in 0..run.trainer.epochs {
        for r in t.epoch().rows {
            log.push_str(&r.to_csv());
            log.push('\n');
        }
    }
    (log, Checkpoint::new(t.state, run.clone(), names, "pretrain", seed).to_bytes())
}

fn reproducibility() -> Outcome {
    let run = tiny_run();
    let (la, ca) = train_bytes(&run, 11);
    let (lb, cb) = train_bytes(&run, 11);
    let (lc, _) = train_bytes(&run, 12);
    check(
        la == lb && ca == cb && la != lc,
        format!(
            "logs equal {}, checkpoints equal {} ({} bytes), other seed differs {}",
            la == lb,
            ca == cb,
            ca.len(),
            la != lc
        ),
    )
}

fn metric_definitions() -> Outcome {
    let mut fails = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    expect("1000/1000", normalized_episode_length(1000, 1000) == Ok(1.0));
    expect("0/1000", normalized_episode_length(0, 1000) == Ok(0.0));
    expect("monotone", (0..=1000).all(|k| normalized_episode_length(k, 1000).unwrap() <= normalized_episode_length((k + 1).min(1000), 1000).unwrap()));
    let cmd = vec![[0.5, 0.0, 0.0]; 200];
    expect("perfect", tracking_errors(&cmd, &cmd) == Ok([0.0; 3]));
    let mut early = cmd.clone();
    for v in early.iter_mut().take(50) {
        *v = [9.0, 9.0, 9.0];
    }
    expect("first 50 excluded", tracking_errors(&early, &cmd) == Ok([0.0; 3]));
    let off: Vec<[f64; 3]> = cmd.iter().map(|c| [c[0] + 0.05, 0.0, 0.2]).collect();
    let e = tracking_errors(&off, &cmd).unwrap_or([f64::NAN; 3]);
    expect("5 cm/s", (e[0] - 5.0).abs() < 1e-9);
    expect("deg/s", (e[2] - 0.2 * 180.0 / std::f64::consts::PI).abs() < 1e-9);
    expect("too short", tracking_errors(&cmd[..50], &cmd[..50]) == Err(MetricError::TooShort(50)));
    check(fails.is_empty(), if fails.is_empty() { "all unit examples hold".into() } else { format!("failed: {fails:?}") })
}

// ---- desk-scale training criteria ----

const SEEDS: [u64; 3] = [1, 2, 3];

fn out_dir() -> PathBuf {
    std::env::var_os("ACCEPTANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance"))
}

/// Held-out walker: longer legs and heavier links than any training robot.
fn held_out() -> RobotModel {
    let f = WalkerFamily {
        leg_length_scale: 1.3,
        mass_scale: 1.4,
        ..WalkerFamily::biped()
    };
    let mut m = generate_walker(&f, 77).expect("held-out walker");
    m.name = "held-out".into();
    m
}

/// Pretrained desk-scale checkpoint for `seed`, trained on first use.
fn pretrained(seed: u64, minutes: &mut Vec<f64>) -> Result<Checkpoint<f32>, String> {
    let dir = out_dir().join(format!("pretrain_seed{seed}"));
    let path = dir.join("final.hzck");
    if let Ok(ck) = Checkpoint::<f32>::load(&path) {
        if let Ok(t) = std::fs::read_to_string(dir.join("minutes.txt")) {
            minutes.extend(t.trim().parse::<f64>().ok());
        }
        return Ok(ck);
    }
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let run = RunConfig::desk_scale();
    let robots = run.resolve_robots(Path::new(".")).map_err(|e| e.to_string())?;
    let names: Vec<String> = robots.iter().map(|r| r.name.clone()).collect();
    let t0 = Instant::now();
    let mut t = Trainer::<f32>::new(&run.trainer, &run.env, &run.dr, &run.reward, robots, seed)?;
    let mut log = format!("{}\n", MetricsRow::HEADER);
    for e in 0..run.trainer.epochs {
        let rows = t.epoch().rows;
        if (e + 1) % 100 == 0 {
            let lens: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.mean_ep_len_norm)).collect();
            eprintln!("seed {seed} epoch {} ep_len [{}] {:.1} min", e + 1, lens.join(" "), t0.elapsed().as_secs_f64() / 60.0);
        }
        for r in rows {
            log.push_str(&r.to_csv());
            log.push('\n');
        }
    }
    let mins = t0.elapsed().as_secs_f64() / 60.0;
    minutes.push(mins);
    std::fs::write(dir.join("metrics.csv"), log).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("minutes.txt"), format!("{mins}\n")).map_err(|e| e.to_string())?;
    let ck = Checkpoint::new(t.state, run, names, "pretrain", seed);
    ck.save(&path).map_err(|e| e.to_string())?;
    Ok(ck)
}

fn eval_on(ck: &Checkpoint<f32>, robot: &RobotModel, seed: u64) -> Result<EvalSummary, String> {
    let run = &ck.meta.run;
    evaluate(&ck.state.policy, &ck.state.desc_stats, robot, &run.env, &run.reward, &EvalConfig::default(), seed).map(|r| r.0)
}

fn desk_pretraining() -> Outcome {
    let mut minutes = Vec::new();
    let robots = RunConfig::desk_scale().resolve_robots(Path::new(".")).map_err(|e| e.to_string())?;
    let mut lens = vec![0.0; robots.len()];
    for seed in SEEDS {
        let ck = pretrained(seed, &mut minutes)?;
        for (k, r) in robots.iter().enumerate() {
            lens[k] += eval_on(&ck, r, seed)?.ep_len_norm.mean / SEEDS.len() as f64;
        }
    }
    let worst_min = minutes.iter().cloned().fold(0.0, f64::max);
    let per: Vec<String> = robots.iter().zip(&lens).map(|(r, l)| format!("{} {l:.3}", r.name)).collect();
    check(
        lens.iter().all(|&l| l >= 0.8) && worst_min <= 30.0,
        format!("seed-mean ep_len_norm [{}], slowest seed {worst_min:.1} min", per.join(", ")),
    )
}

fn transfer_advantage() -> Outcome {
    let robot = held_out();
    let mut s_ret = Vec::new();
    let budgets = vec![0, 100, 200, 300, 400, 500];
    let mut p_ret = vec![Vec::new(); budgets.len()];
    for seed in SEEDS {
        let ck = pretrained(seed, &mut Vec::new())?;
        let cc = CompareConfig {
            scratch_budgets: vec![1000],
            pretrained_budgets: budgets.clone(),
            seeds: vec![seed],
            init_std: 0.2,
        };
        let rows = compare_regimes(&ck.meta.run, &ck, &robot, &cc).map_err(|e| e.to_string())?;
        for r in rows {
            if r.regime == "S" {
                s_ret.push(r.return_mean);
            } else if let Some(k) = budgets.iter().position(|&b| b == r.epochs) {
                p_ret[k].push(r.return_mean);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let target = mean(&s_ret);
    let curve: Vec<f64> = p_ret.iter().map(|v| mean(v)).collect();
    let reached = budgets.iter().zip(&curve).find(|(_, &r)| r >= target).map(|(b, _)| *b);
    let shown: Vec<String> = budgets.iter().zip(&curve).map(|(b, r)| format!("{b}:{r:.2}")).collect();
    check(
        reached.is_some(),
        format!("scratch@1000 return {target:.2}; pretrained curve [{}]; reached at {reached:?}", shown.join(" ")),
    )
}

fn variance_ordering() -> Outcome {
    let robot = held_out();
    let mut means = [0.0; 2];
    for seed in SEEDS {
        let ck = pretrained(seed, &mut Vec::new())?;
        for (k, sigma) in [0.2, 0.8].into_iter().enumerate() {
            let s = adapt_checkpoint(&ck, &robot, sigma).map_err(|e| e.to_string())?;
            let (s, _) = finetune(&ck.meta.run, s, robot.clone(), 50, seed, |_| {}).map_err(|e| e.to_string())?;
            let r = &ck.meta.run;
            let e = evaluate(&s.policy, &s.desc_stats, &robot, &r.env, &r.reward, &EvalConfig::default(), seed)?.0;
            means[k] += e.ep_len_norm.mean / SEEDS.len() as f64;
        }
    }
    check(
        means[0] >= means[1],
        format!("mean ep_len_norm after 50 epochs: init std 0.2 -> {:.3}, 0.8 -> {:.3}", means[0], means[1]),
    )
}

fn main() {
    let full = std::env::var("ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome, bool); 11] = [
        (1, "unified-space round trip", unified_round_trip, false),
        (2, "loss weight oracle", weight_oracle, false),
        (3, "gradient correctness", gradient_check, false),
        (4, "physics sanity", physics, false),
        (5, "randomization containment", dr_containment, false),
        (6, "desk-scale pretraining", desk_pretraining, true),
        (7, "transfer advantage", transfer_advantage, true),
        (8, "variance-init ordering", variance_ordering, true),
        (9, "descriptor separation", descriptor_separation, false),
        (10, "reproducibility", reproducibility, false),
        (11, "metric definitions", metric_definitions, false),
    ];
    let mut failed = 0;
    for (id, name, f, heavy) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        if heavy && !full {
            println!("criterion {id:>2} {name}: SKIP (needs ACCEPTANCE_FULL=1)");
            continue;
        }
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {id:>2} {name}: PASS ({d}) [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({d}) [{secs:.1} s]");
            }
        }
    }
    println!("{failed} failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
