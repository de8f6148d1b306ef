use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::json;
use strider_core::checkpoint::{decode, Checkpoint, CheckpointError, CheckpointMeta};
use strider_core::config::{RobotSource, RunConfig};
use strider_core::descriptors::{compute_descriptor, DESCRIPTOR_LEN};
use strider_core::eval::{evaluate, export_rollout_features, run_episodes, FeatureTrajectory, RunSpec};
use strider_core::randomization::{sample_variant, DrConfig};
use strider_core::robot_model::{generate_walker, parse_model, serialize_model, ParseOptions, RobotModel, WalkerFamily, WalkerKind};
use strider_core::roster::ROSTER_VERSION;
use strider_core::sim::TrajRow;
use strider_core::trainer::{MetricsRow, Trainer};
use strider_core::transfer::{adapt_checkpoint, compare_regimes, finetune, CompareConfig, CompareRow, TransferError};
use strider_core::unified_space::build_mapping;
use strider_core::Scalar;

use crate::*;

/// Consecutive non-finite updates tolerated before a run is abandoned.
const MAX_NON_FINITE: usize = 10;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: e.into(),
    }
}

fn fault(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_TRAINING,
        error: e.into(),
    }
}

type Res<T = ()> = Result<T, Failure>;

pub fn run(cmd: Command) -> Res {
    match cmd {
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => with_checkpoint(&a.pretrained.clone(), |c| match c {
            Loaded::F32(c) => finetune_cmd(c, &a),
            Loaded::F64(c) => finetune_cmd(c, &a),
        }),
        Command::Eval(a) => with_checkpoint(&a.policy.clone(), |c| match c {
            Loaded::F32(c) => eval_cmd(c, &a),
            Loaded::F64(c) => eval_cmd(c, &a),
        }),
        Command::Descriptors(a) => descriptors(a),
        Command::ExportFeatures(a) => with_checkpoint(&a.policy.clone(), |c| match c {
            Loaded::F32(c) => export_cmd(c, &a),
            Loaded::F64(c) => export_cmd(c, &a),
        }),
        Command::Compare(a) => with_checkpoint(&a.pretrained.clone(), |c| match c {
            Loaded::F32(c) => compare_cmd(c, &a),
            Loaded::F64(c) => compare_cmd(c, &a),
        }),
        Command::Generate(a) => generate(a),
    }
}

fn resolve_seed(flag: u64) -> Res<u64> {
    match std::env::var("HZERO_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("HZERO_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn init_threads(n: Option<usize>) {
    if let Some(n) = n {
        // a second initialization only happens in-process; ignore it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn build_id() -> String {
    match option_env!("STRIDER_BUILD_ID") {
        Some(id) => format!("{} {} ({id})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        None => format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
    }
}

fn write_manifest(dir: &Path, command: &str, seed: u64, scalar: &str, run: &RunConfig, extra: serde_json::Value) -> Res {
    let mut m = json!({
        "command": command,
        "seed": seed,
        "build": build_id(),
        "roster_version": ROSTER_VERSION,
        "scalar": scalar,
        "threads": rayon::current_num_threads(),
        "config": run,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (m.as_object_mut(), extra) {
        obj.extend(more);
    }
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text + "\n")
        .with_context(|| format!("writing manifest in {}", dir.display()))
        .map_err(fault)
}

fn create_dir(dir: &Path) -> Res {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(usage)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load_robot(path: &Path) -> Res<RobotModel> {
    let m = parse_model(path, ParseOptions::default())
        .with_context(|| format!("robot {}", path.display()))
        .map_err(usage)?;
    build_mapping(&m)
        .with_context(|| format!("robot {}", path.display()))
        .map_err(usage)?;
    Ok(m)
}

pub enum Loaded {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

fn checkpoint_failure(path: &Path, e: CheckpointError) -> Failure {
    let code = match e {
        CheckpointError::Io { .. } => EXIT_USAGE,
        _ => EXIT_CORRUPT,
    };
    Failure {
        code,
        error: anyhow!(e).context(format!("checkpoint {}", path.display())),
    }
}

pub fn load_checkpoint(path: &Path) -> Res<Loaded> {
    let bytes = std::fs::read(path).map_err(|e| {
        checkpoint_failure(
            path,
            CheckpointError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            },
        )
    })?;
    let raw = decode(&bytes).map_err(|e| checkpoint_failure(path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&raw.meta_json)
        .map_err(|e| checkpoint_failure(path, CheckpointError::Malformed(format!("metadata: {e}"))))?;
    match meta.scalar.as_str() {
        "f32" => Checkpoint::from_raw(raw).map(Loaded::F32),
        "f64" => Checkpoint::from_raw(raw).map(Loaded::F64),
        other => Err(CheckpointError::Malformed(format!("unknown scalar type {other}"))),
    }
    .map_err(|e| checkpoint_failure(path, e))
}

fn with_checkpoint(path: &Path, f: impl FnOnce(Loaded) -> Res) -> Res {
    f(load_checkpoint(path)?)
}

fn save<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Res {
    ck.save(path).map_err(fault)
}

fn csv_writer(path: &Path) -> Res<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(fault)
}

fn write_line(w: &mut impl Write, line: &str) -> Res {
    writeln!(w, "{line}").context("writing output").map_err(fault)
}

/// Output sink: a file, or stdout when no path is given.
fn sink(out: &Option<PathBuf>) -> Res<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(
            File::create(p)
                .map(BufWriter::new)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(usage)?,
        ),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Robot files in the snapshot become absolute so the manifest replays from
/// any directory.
fn snapshot(run: &RunConfig, base_dir: &Path) -> RunConfig {
    let mut s = run.clone();
    for r in &mut s.robots {
        if let RobotSource::File(p) = r {
            if p.is_relative() {
                *p = absolute(&base_dir.join(&*p));
            }
        }
    }
    s
}

fn pretrain(a: PretrainArgs) -> Res {
    let seed = resolve_seed(a.common.seed)?;
    init_threads(a.common.threads);
    let (mut run, base_dir) = match (&a.config, &a.preset) {
        (Some(p), _) => (
            RunConfig::load(p).map_err(usage)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        (None, Some(name)) => (
            RunConfig::preset(name).ok_or_else(|| usage(anyhow!("unknown preset {name}")))?,
            PathBuf::from("."),
        ),
        (None, None) => (RunConfig::desk_scale(), PathBuf::from(".")),
    };
    if let Some(e) = a.epochs {
        run.trainer.epochs = e;
    }
    if let Some(n) = a.num_envs {
        run.trainer.num_envs = n;
    }
    run.validate().map_err(usage)?;
    let robots = run.resolve_robots(&base_dir).map_err(usage)?;
    let run = snapshot(&run, &base_dir);
    create_dir(&a.out)?;
    match a.precision {
        Precision::F32 => pretrain_t::<f32>(run, robots, seed, &a.out),
        Precision::F64 => pretrain_t::<f64>(run, robots, seed, &a.out),
    }
}

fn pretrain_t<T: Scalar>(run: RunConfig, robots: Vec<RobotModel>, seed: u64, out: &Path) -> Res {
    let names: Vec<String> = robots.iter().map(|r| r.name.clone()).collect();
    write_manifest(out, "pretrain", seed, T::NAME, &run, json!({ "regime": "pretrain", "embodiments": names }))?;
    let mut t = Trainer::<T>::new(&run.trainer, &run.env, &run.dr, &run.reward, robots, seed).map_err(|e| usage(anyhow!(e)))?;
    let mut metrics = csv_writer(&out.join("metrics.csv"))?;
    write_line(&mut metrics, MetricsRow::HEADER)?;
    let epochs = run.trainer.epochs;
    let every = run.trainer.checkpoint_every;
    let report_every = (epochs / 20).max(1);
    let mut bad = 0;
    for _ in 0..epochs {
        let rep = t.epoch();
        if rep.update.non_finite {
            bad += 1;
            if bad >= MAX_NON_FINITE {
                return Err(fault(anyhow!(
                    "{bad} consecutive non-finite updates at epoch {}",
                    t.state.epoch
                )));
            }
        } else {
            bad = 0;
        }
        for r in &rep.rows {
            write_line(&mut metrics, &r.to_csv())?;
        }
        let e = t.state.epoch;
        if e % report_every == 0 || e == epochs {
            let lens: Vec<String> = rep.rows.iter().map(|r| format!("{}={:.3}", r.embodiment, r.mean_ep_len_norm)).collect();
            log::info!("epoch {e}/{epochs} lr {:.2e} kl {:.4} len {}", rep.update.lr, rep.update.kl, lens.join(" "));
        }
        if every > 0 && e % every == 0 && e < epochs {
            metrics.flush().map_err(fault)?;
            let ck = Checkpoint::new(t.state.clone(), run.clone(), names.clone(), "pretrain", seed);
            save(&ck, &out.join(format!("ckpt_{e:06}.hzck")))?;
        }
    }
    metrics.flush().map_err(fault)?;
    let ck = Checkpoint::new(t.state, run, names, "pretrain", seed);
    save(&ck, &out.join("final.hzck"))
}

fn training_failure(e: TransferError) -> Failure {
    match e {
        TransferError::Model(m) => usage(m),
        TransferError::Training(s) => fault(anyhow!(s)),
    }
}

fn finetune_cmd<T: Scalar>(ck: Checkpoint<T>, a: &FinetuneArgs) -> Res {
    let seed = resolve_seed(a.common.seed)?;
    init_threads(a.common.threads);
    let robot = load_robot(&a.robot)?;
    let mut run = ck.meta.run.clone();
    run.robots = vec![RobotSource::File(absolute(&a.robot))];
    if let Some(n) = a.num_envs {
        run.trainer.num_envs = n;
    }
    run.validate().map_err(usage)?;
    if !(a.lr > 0.0) {
        return Err(usage(anyhow!("--lr must be positive")));
    }
    let mut state = adapt_checkpoint(&ck, &robot, a.init_std).map_err(training_failure)?;
    state.lr = a.lr;
    create_dir(&a.out)?;
    write_manifest(
        &a.out,
        "finetune",
        seed,
        T::NAME,
        &run,
        json!({
            "regime": "P",
            "epochs": a.epochs,
            "init_std": a.init_std,
            "lr": a.lr,
            "pretrained": absolute(&a.pretrained),
            "robot": robot.name,
        }),
    )?;
    let mut metrics = csv_writer(&a.out.join("metrics.csv"))?;
    write_line(&mut metrics, MetricsRow::HEADER)?;
    let mut io_err = None;
    let (state, _) = finetune(&run, state, robot.clone(), a.epochs, seed, |rep| {
        for r in &rep.rows {
            if let Err(e) = writeln!(metrics, "{}", r.to_csv()) {
                io_err.get_or_insert(e);
            }
        }
    })
    .map_err(training_failure)?;
    if let Some(e) = io_err {
        return Err(fault(e));
    }
    metrics.flush().map_err(fault)?;
    let (summary, _) = evaluate(&state.policy, &state.desc_stats, &robot, &run.env, &run.reward, &run.eval, seed)
        .map_err(|e| fault(anyhow!(e)))?;
    let ck = Checkpoint::new(state, run, vec![robot.name.clone()], "P", seed);
    save(&ck, &a.out.join("finetuned.hzck"))?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(a.out.join("eval.json"), format!("{text}\n")).map_err(fault)?;
    println!("{text}");
    Ok(())
}

fn eval_cmd<T: Scalar>(ck: Checkpoint<T>, a: &EvalArgs) -> Res {
    let seed = resolve_seed(a.common.seed)?;
    init_threads(a.common.threads);
    let robot = load_robot(&a.robot)?;
    let run = &ck.meta.run;
    let mut eval = run.eval.clone();
    eval.command_scale = a.command_scale;
    eval.episodes = a.episodes;
    if let Some(n) = a.envs {
        eval.num_envs = n;
    }
    eval.validate().map_err(|e| usage(anyhow!(e)))?;
    let (summary, records) = evaluate(&ck.state.policy, &ck.state.desc_stats, &robot, &run.env, &run.reward, &eval, seed)
        .map_err(|e| usage(anyhow!(e)))?;
    if let Some(p) = &a.dump_traj {
        let mut w = csv_writer(p)?;
        write_line(&mut w, &format!("env,episode,{}", TrajRow::HEADER))?;
        let mut episode = 0;
        for (i, r) in records.iter().enumerate() {
            if i > 0 && records[i - 1].env == r.env {
                episode += 1;
            } else {
                episode = 0;
            }
            for row in &r.rows {
                write_line(&mut w, &format!("{},{episode},{}", r.env, row.to_csv()))?;
            }
        }
        w.flush().map_err(fault)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn descriptors(a: DescriptorArgs) -> Res {
    let seed = resolve_seed(a.common.seed)?;
    init_threads(a.common.threads);
    let mut robots = Vec::new();
    for p in &a.robots {
        robots.push(load_robot(p)?);
    }
    if let Some(c) = &a.config {
        let run = RunConfig::load(c).map_err(usage)?;
        let base = c.parent().map(Path::to_path_buf).unwrap_or_default();
        robots.extend(run.resolve_robots(&base).map_err(usage)?);
    }
    if robots.is_empty() {
        return Err(usage(anyhow!("give at least one --robot or a --config")));
    }
    let dr = DrConfig::with_multiplier(a.dr_mult);
    dr.validate().map_err(|e| usage(anyhow!(e)))?;
    let mut w = sink(&a.out)?;
    let mut header = String::from("name");
    for i in 0..DESCRIPTOR_LEN {
        header.push_str(&format!(",z{i}"));
    }
    write_line(&mut w, &header)?;
    for m in &robots {
        let map = build_mapping(m).map_err(usage)?;
        let models: Vec<RobotModel> = match a.variants {
            None => vec![m.clone()],
            Some(n) => (0..n as u64).map(|k| sample_variant(m, &dr, seed.wrapping_add(k)).model).collect(),
        };
        for v in &models {
            let z = compute_descriptor(v, &map);
            let mut line = m.name.clone();
            for x in z.z_e() {
                line.push_str(&format!(",{x}"));
            }
            write_line(&mut w, &line)?;
        }
    }
    w.flush().map_err(fault)
}

fn export_cmd<T: Scalar>(ck: Checkpoint<T>, a: &ExportArgs) -> Res {
    let seed = resolve_seed(a.common.seed)?;
    init_threads(a.common.threads);
    let run = &ck.meta.run;
    let mut trajs = Vec::new();
    for p in &a.robots {
        let robot = load_robot(p)?;
        for &mult in &a.dr_mult {
            let dr = DrConfig {
                enabled: true,
                multiplier: mult,
                ..run.dr.clone()
            };
            dr.validate().map_err(|e| usage(anyhow!(e)))?;
            let spec = RunSpec {
                env: run.env.clone(),
                dr,
                reward: run.reward.clone(),
                command_scale: run.eval.command_scale,
                num_envs: a.envs.max(1),
                episodes_per_env: a.episodes.max(1),
                seed,
                record_states: true,
            };
            let records = run_episodes(&ck.state.policy, &ck.state.desc_stats, &robot, &spec).map_err(|e| usage(anyhow!(e)))?;
            trajs.extend(records.into_iter().map(|r| FeatureTrajectory {
                embodiment: robot.name.clone(),
                dr_mult: mult,
                successful: r.successful(),
                states: r.states,
            }));
        }
    }
    let mut w = csv_writer(&a.out)?;
    let rows = export_rollout_features(&trajs, a.stride, &mut w).map_err(fault)?;
    w.flush().map_err(fault)?;
    let ok = trajs.iter().filter(|t| t.successful).count();
    log::info!("{rows} rows from {ok} of {} trajectories", trajs.len());
    Ok(())
}

fn compare_cmd<T: Scalar>(ck: Checkpoint<T>, a: &CompareArgs) -> Res {
    init_threads(a.threads);
    let robot = load_robot(&a.robot)?;
    let mut run = ck.meta.run.clone();
    run.robots = vec![RobotSource::File(absolute(&a.robot))];
    if let Some(n) = a.num_envs {
        run.trainer.num_envs = n;
    }
    run.validate().map_err(usage)?;
    if a.seeds.is_empty() {
        return Err(usage(anyhow!("--seeds must not be empty")));
    }
    let cc = CompareConfig {
        scratch_budgets: a.scratch_budgets.clone(),
        pretrained_budgets: a.pretrained_budgets.clone(),
        seeds: a.seeds.clone(),
        init_std: a.init_std,
    };
    let rows = compare_regimes(&run, &ck, &robot, &cc).map_err(training_failure)?;
    let mut w = sink(&a.out)?;
    write_line(&mut w, CompareRow::HEADER)?;
    for r in &rows {
        write_line(&mut w, &r.to_csv())?;
    }
    w.flush().map_err(fault)
}

fn generate(a: GenerateArgs) -> Res {
    let family = WalkerFamily {
        kind: match a.kind {
            Kind::Biped => WalkerKind::Biped,
            Kind::QuadrupedPair => WalkerKind::QuadrupedPair,
        },
        segments_per_leg: a.segments,
        leg_length_scale: a.leg_length_scale,
        mass_scale: a.mass_scale,
        gain_scale: a.gain_scale,
        jitter: a.jitter,
    };
    let mut m = generate_walker(&family, a.seed).map_err(usage)?;
    if let Some(n) = a.name {
        m.name = n;
    }
    let mut w = sink(&a.out)?;
    write_line(&mut w, serialize_model(&m).trim_end())?;
    w.flush().map_err(fault)
}
