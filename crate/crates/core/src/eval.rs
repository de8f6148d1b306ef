//! Evaluation metrics, deterministic evaluation runs and feature export.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::{compute_descriptor, DescriptorStats, DESCRIPTOR_LEN};
use crate::nn::{Policy, OBS_LEN};
use crate::randomization::DrConfig;
use crate::robot_model::RobotModel;
use crate::roster::NUM_SLOTS;
use crate::scalar::Scalar;
use crate::sim::{DoneReason, EnvConfig, RewardConfig, TrajRow, WalkerEnv, FRAME_LEN};
use crate::unified_space::build_mapping;

/// Leading control steps ignored by the tracking errors.
pub const EXCLUDED_STEPS: usize = 50;
/// Consecutive steps per exported feature row.
pub const FEATURE_WINDOW: usize = 5;
/// State features per step: q, qdot, pitch rate, gravity, velocity estimate.
pub const STATE_FEATURES: usize = 2 * NUM_SLOTS + 3 + 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("trajectory has {0} steps, tracking errors need more than {EXCLUDED_STEPS}")]
    TooShort(usize),
    #[error("executed steps {executed} outside [0, {limit}]")]
    InvalidSteps { executed: usize, limit: usize },
    #[error("{0} velocities for {1} commands")]
    LengthMismatch(usize, usize),
}

pub fn normalized_episode_length(executed: usize, limit: usize) -> Result<f64, MetricError> {
    if limit == 0 || executed > limit {
        return Err(MetricError::InvalidSteps { executed, limit });
    }
    Ok(executed as f64 / limit as f64)
}

/// Mean absolute `(v_x, v_y, yaw rate)` errors after the first
/// [`EXCLUDED_STEPS`] steps, in cm/s, cm/s and deg/s.
pub fn tracking_errors(actual: &[[f64; 3]], commands: &[[f64; 3]]) -> Result<[f64; 3], MetricError> {
    if actual.len() != commands.len() {
        return Err(MetricError::LengthMismatch(actual.len(), commands.len()));
    }
    if actual.len() <= EXCLUDED_STEPS {
        return Err(MetricError::TooShort(actual.len()));
    }
    let n = (actual.len() - EXCLUDED_STEPS) as f64;
    let mut sum = [0.0; 3];
    for (a, c) in actual.iter().zip(commands).skip(EXCLUDED_STEPS) {
        for k in 0..3 {
            sum[k] += (a[k] - c[k]).abs();
        }
    }
    Ok([100.0 * sum[0] / n, 100.0 * sum[1] / n, sum[2].to_degrees() / n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub command_scale: f64,
    /// Episodes per environment.
    pub episodes: usize,
    pub num_envs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            command_scale: 0.6,
            episodes: 4,
            num_envs: 4,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.command_scale > 0.0 && self.command_scale <= 1.0) {
            return Err(format!("eval.command_scale must lie in (0, 1], got {}", self.command_scale));
        }
        if self.episodes == 0 || self.num_envs == 0 {
            return Err("eval.episodes and eval.num_envs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; NaN for an empty sample.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub robot: String,
    pub episodes: usize,
    pub ep_len_norm: MeanStd,
    #[serde(rename = "Evx")]
    pub evx: MeanStd,
    #[serde(rename = "Evy")]
    pub evy: MeanStd,
    #[serde(rename = "Epsi")]
    pub epsi: MeanStd,
    #[serde(rename = "return")]
    pub ret: MeanStd,
}

/// One finished evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub env: usize,
    pub length: usize,
    pub ret: f64,
    pub reason: DoneReason,
    pub actual: Vec<[f64; 3]>,
    pub commands: Vec<[f64; 3]>,
    /// Per-step state features, when requested.
    pub states: Vec<Vec<f64>>,
    pub rows: Vec<TrajRow>,
}

impl EpisodeRecord {
    /// Only a timeout counts as success.
    pub fn successful(&self) -> bool {
        self.reason == DoneReason::Timeout
    }
}

/// How [`run_episodes`] drives its environments.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub env: EnvConfig,
    pub dr: DrConfig,
    pub reward: RewardConfig,
    pub command_scale: f64,
    pub num_envs: usize,
    pub episodes_per_env: usize,
    pub seed: u64,
    pub record_states: bool,
}

fn state_features<T: Scalar>(frame: &[T]) -> Vec<f64> {
    let mut f: Vec<f64> = frame[..2 * NUM_SLOTS + 3].iter().map(|v| v.as_f64()).collect();
    f.extend(frame[FRAME_LEN - 2..].iter().map(|v| v.as_f64()));
    f
}

/// Runs the policy's mean action on `robot` until every environment has
/// finished its episodes. Records come back ordered by `(env, episode)`.
pub fn run_episodes<T: Scalar>(
    policy: &Policy<T>,
    stats: &DescriptorStats,
    robot: &RobotModel,
    spec: &RunSpec,
) -> Result<Vec<EpisodeRecord>, String> {
    let mapping = build_mapping(robot).map_err(|e| e.to_string())?;
    let mut envs: Vec<WalkerEnv<T>> = (0..spec.num_envs)
        .map(|k| {
            let mut e = WalkerEnv::new(
                robot.clone(),
                mapping.clone(),
                spec.env.clone(),
                spec.dr.clone(),
                spec.reward.clone(),
                spec.seed,
                k as u64,
            );
            e.set_command_scale(spec.command_scale);
            e.reset_episode();
            e
        })
        .collect();
    let desc_of = |e: &WalkerEnv<T>| -> Vec<T> {
        let z = compute_descriptor(&e.variant().model, e.mapping());
        stats.standardize(z.z_e()).into_iter().map(T::lit).collect()
    };
    let mut desc: Vec<Vec<T>> = envs.iter().map(desc_of).collect();
    let mut done_count = vec![0usize; spec.num_envs];
    let mut current: Vec<EpisodeRecord> = (0..spec.num_envs)
        .map(|k| EpisodeRecord {
            env: k,
            length: 0,
            ret: 0.0,
            reason: DoneReason::Timeout,
            actual: Vec::new(),
            commands: Vec::new(),
            states: Vec::new(),
            rows: Vec::new(),
        })
        .collect();
    let mut finished = Vec::new();
    loop {
        let active: Vec<usize> = (0..spec.num_envs).filter(|&k| done_count[k] < spec.episodes_per_env).collect();
        if active.is_empty() {
            break;
        }
        let mut obs = vec![T::zero(); active.len() * OBS_LEN];
        let mut d = Vec::with_capacity(active.len() * DESCRIPTOR_LEN);
        for (r, &k) in active.iter().enumerate() {
            envs[k].observation_into(&mut obs[r * OBS_LEN..(r + 1) * OBS_LEN]);
            d.extend_from_slice(&desc[k]);
        }
        let out = policy.act(&obs, &d, active.len());
        for (r, &k) in active.iter().enumerate() {
            let env = &mut envs[k];
            let cmd = env.state().command;
            let res = env.step(
                &out.mean[r * NUM_SLOTS..(r + 1) * NUM_SLOTS],
                [out.estimate[2 * r], out.estimate[2 * r + 1]],
            );
            let rec = &mut current[k];
            rec.actual.push([res.base_velocity[0].as_f64(), 0.0, 0.0]);
            rec.commands.push([cmd[0].as_f64(), cmd[1].as_f64(), cmd[2].as_f64()]);
            rec.rows.push(res.row);
            if spec.record_states {
                rec.states.push(state_features(&env.frame()));
            }
            if let Some(ep) = res.episode {
                rec.length = ep.length;
                rec.ret = ep.ret;
                rec.reason = ep.reason;
                let next = EpisodeRecord {
                    env: k,
                    length: 0,
                    ret: 0.0,
                    reason: DoneReason::Timeout,
                    actual: Vec::new(),
                    commands: Vec::new(),
                    states: Vec::new(),
                    rows: Vec::new(),
                };
                finished.push(std::mem::replace(rec, next));
                done_count[k] += 1;
                env.reset_episode();
                desc[k] = desc_of(env);
            }
        }
    }
    finished.sort_by_key(|r| r.env);
    Ok(finished)
}

pub fn summarize(robot: &str, records: &[EpisodeRecord], episode_limit: usize) -> EvalSummary {
    let lens: Vec<f64> = records.iter().map(|r| r.length as f64 / episode_limit as f64).collect();
    let rets: Vec<f64> = records.iter().map(|r| r.ret).collect();
    let errs: Vec<[f64; 3]> = records
        .iter()
        .filter_map(|r| tracking_errors(&r.actual, &r.commands).ok())
        .collect();
    let col = |k: usize| MeanStd::of(&errs.iter().map(|e| e[k]).collect::<Vec<_>>());
    EvalSummary {
        robot: robot.to_string(),
        episodes: records.len(),
        ep_len_norm: MeanStd::of(&lens),
        evx: col(0),
        evy: col(1),
        epsi: col(2),
        ret: MeanStd::of(&rets),
    }
}

/// Deterministic evaluation with randomization off.
pub fn evaluate<T: Scalar>(
    policy: &Policy<T>,
    stats: &DescriptorStats,
    robot: &RobotModel,
    env: &EnvConfig,
    reward: &RewardConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeRecord>), String> {
    eval.validate()?;
    let spec = RunSpec {
        env: env.clone(),
        dr: DrConfig::disabled(),
        reward: reward.clone(),
        command_scale: eval.command_scale,
        num_envs: eval.num_envs,
        episodes_per_env: eval.episodes,
        seed,
        record_states: false,
    };
    let records = run_episodes(policy, stats, robot, &spec)?;
    Ok((summarize(&robot.name, &records, env.episode_limit), records))
}

/// Per-step states of one trajectory with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrajectory {
    pub embodiment: String,
    pub dr_mult: f64,
    pub successful: bool,
    pub states: Vec<Vec<f64>>,
}

pub fn feature_header() -> String {
    let mut h = String::from("embodiment,dr_mult");
    for i in 0..FEATURE_WINDOW * STATE_FEATURES {
        h.push_str(&format!(",f{i}"));
    }
    h
}

/// Writes one row per `FEATURE_WINDOW`-step window, windows starting every
/// `stride` steps, for successful trajectories only. Returns the row count.
pub fn export_rollout_features(
    trajs: &[FeatureTrajectory],
    stride: usize,
    out: &mut impl Write,
) -> std::io::Result<usize> {
    let stride = stride.max(1);
    writeln!(out, "{}", feature_header())?;
    let mut rows = 0;
    for t in trajs.iter().filter(|t| t.successful) {
        let mut start = 0;
        while start + FEATURE_WINDOW <= t.states.len() {
            let mut line = format!("{},{}", t.embodiment, t.dr_mult);
            for s in &t.states[start..start + FEATURE_WINDOW] {
                for v in s {
                    line.push_str(&format!(",{v}"));
                }
            }
            writeln!(out, "{line}")?;
            rows += 1;
            start += stride;
        }
    }
    Ok(rows)
}
