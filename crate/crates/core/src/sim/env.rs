//! Velocity-command locomotion task around a [`World`].

use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reward::{compute_reward, RewardBreakdown, RewardConfig, RewardInputs};
use super::world::{Actuation, PhysicsParams, SimState, World};
use crate::randomization::{sample_variant, DrConfig, EmbodimentVariant};
use crate::robot_model::RobotModel;
use crate::roster::NUM_SLOTS;
use crate::scalar::Scalar;
use crate::unified_space::{ActionMask, JointMapping, MaskPreset};

/// Values per observation frame.
pub const FRAME_LEN: usize = 2 * NUM_SLOTS + 1 + 2 + 3 + NUM_SLOTS + 2;
/// Frames in the stacked observation.
pub const HISTORY_LEN: usize = 5;

const CMD_OFFSET: usize = 2 * NUM_SLOTS + 3;
const PREV_ACTION_OFFSET: usize = CMD_OFFSET + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Control steps per episode.
    pub episode_limit: usize,
    /// Unified action to joint-target scale, rad.
    pub action_scale: f64,
    /// Actions are clipped to `+-action_clip` before scaling.
    pub action_clip: f64,
    pub command_vx: [f64; 2],
    pub command_vy: [f64; 2],
    pub command_yaw: [f64; 2],
    /// Uniform joint noise at reset, rad.
    pub reset_noise: f64,
    /// Fall when base height < ratio * nominal height.
    pub fall_height_ratio: f64,
    pub max_pitch: f64,
    pub mask: MaskPreset,
    pub physics: PhysicsParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            episode_limit: 1000,
            action_scale: 0.25,
            action_clip: 5.0,
            command_vx: [-0.6, 1.2],
            command_vy: [-0.4, 0.4],
            command_yaw: [-1.0, 1.0],
            reset_noise: 0.05,
            fall_height_ratio: 0.5,
            max_pitch: 1.0,
            mask: MaskPreset::Whole32,
            physics: PhysicsParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.episode_limit == 0 {
            return Err("env.episode_limit must be positive".into());
        }
        if !(self.action_scale > 0.0 && self.action_clip > 0.0) {
            return Err("env.action_scale and env.action_clip must be positive".into());
        }
        if self.command_vx[0] > self.command_vx[1] {
            return Err("env.command_vx must be ordered".into());
        }
        if !(self.physics.dt > 0.0 && self.physics.substeps > 0) {
            return Err("env.physics.dt and substeps must be positive".into());
        }
        Ok(())
    }

    /// Command range for `v_x` at a curriculum scale.
    pub fn vx_range(&self, scale: f64) -> [f64; 2] {
        [self.command_vx[0] * scale, self.command_vx[1] * scale]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    FallHeight,
    FallPitch,
    Timeout,
    Fault,
}

impl DoneReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DoneReason::FallHeight => "fall_height",
            DoneReason::FallPitch => "fall_pitch",
            DoneReason::Timeout => "timeout",
            DoneReason::Fault => "fault",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub ret: f64,
    pub length: usize,
    pub reason: DoneReason,
}

/// One control step as written by trajectory dumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajRow {
    pub step: u64,
    pub time: f64,
    pub base_x: f64,
    pub base_z: f64,
    pub pitch: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch_rate: f64,
    pub cmd_vx: f64,
    pub reward: f64,
    pub done: bool,
}

impl TrajRow {
    pub const HEADER: &'static str = "step,time,base_x,base_z,pitch,vx,vz,pitch_rate,cmd_vx,reward,done";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.time,
            self.base_x,
            self.base_z,
            self.pitch,
            self.vx,
            self.vz,
            self.pitch_rate,
            self.cmd_vx,
            self.reward,
            u8::from(self.done)
        )
    }
}

#[derive(Debug, Clone)]
pub struct StepResult<T> {
    pub reward: T,
    pub breakdown: RewardBreakdown<T>,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    /// Ground-truth base COM velocity `(v_x, v_z)` after the step.
    pub base_velocity: [T; 2],
    /// Set when `done`.
    pub episode: Option<EpisodeStats>,
    pub row: TrajRow,
}

/// One environment instance with its own random stream.
#[derive(Debug, Clone)]
pub struct WalkerEnv<T> {
    pub cfg: EnvConfig,
    pub dr: DrConfig,
    pub reward_cfg: RewardConfig,
    source: RobotModel,
    mapping: JointMapping,
    mask: ActionMask,
    variant: EmbodimentVariant,
    world: World<T>,
    state: SimState<T>,
    rng: ChaCha8Rng,
    /// Reseeded at every reset so an episode replays from its reset seed.
    push_rng: ChaCha8Rng,
    history: VecDeque<Vec<T>>,
    prev_action: [T; NUM_SLOTS],
    est_velocity: [T; 2],
    command_scale: f64,
    next_push: f64,
    episode_return: f64,
    nominal_stance: f64,
}

fn sample_in(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

impl<T: Scalar> WalkerEnv<T> {
    /// Builds an environment and resets it. `stream` separates the random
    /// streams of environments that share a seed.
    pub fn new(
        source: RobotModel,
        mapping: JointMapping,
        cfg: EnvConfig,
        dr: DrConfig,
        reward_cfg: RewardConfig,
        seed: u64,
        stream: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let variant = EmbodimentVariant::nominal(&source, &dr);
        let world = World::<T>::from_variant(&variant, cfg.physics.clone());
        let state = world.pose_state(&source, [0.0, source.nominal_base_height], 0.0, &source.nominal_pose);
        let nominal_stance = stance_width(&world.contact_points(&state)).as_f64();
        let mask = ActionMask::preset(cfg.mask);
        let mut env = WalkerEnv {
            cfg,
            dr,
            reward_cfg,
            source,
            mapping,
            mask,
            variant,
            world,
            state,
            rng,
            push_rng: ChaCha8Rng::seed_from_u64(0),
            history: VecDeque::with_capacity(HISTORY_LEN),
            prev_action: [T::zero(); NUM_SLOTS],
            est_velocity: [T::zero(); 2],
            command_scale: 1.0,
            next_push: f64::INFINITY,
            episode_return: 0.0,
            nominal_stance,
        };
        env.reset_episode();
        env
    }

    pub fn source(&self) -> &RobotModel {
        &self.source
    }

    pub fn mapping(&self) -> &JointMapping {
        &self.mapping
    }

    pub fn mask(&self) -> &ActionMask {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: ActionMask) {
        self.mask = mask;
    }

    pub fn variant(&self) -> &EmbodimentVariant {
        &self.variant
    }

    pub fn world(&self) -> &World<T> {
        &self.world
    }

    pub fn state(&self) -> &SimState<T> {
        &self.state
    }

    pub fn command_scale(&self) -> f64 {
        self.command_scale
    }

    /// Takes effect at the next reset.
    pub fn set_command_scale(&mut self, scale: f64) {
        self.command_scale = scale.clamp(f64::MIN_POSITIVE, 1.0);
    }

    /// Starts a new episode with a fresh variant and command drawn from the
    /// environment's stream.
    pub fn reset_episode(&mut self) {
        let variant_seed = self.rng.next_u64();
        let reset_seed = self.rng.next_u64();
        let variant = if self.dr.enabled {
            sample_variant(&self.source, &self.dr, variant_seed)
        } else {
            EmbodimentVariant::nominal(&self.source, &self.dr)
        };
        self.reset(variant, self.command_scale, reset_seed);
    }

    /// Poses `variant` at its nominal pose plus uniform joint noise, with
    /// the base upright and lifted so the lowest contact touches the ground.
    pub fn reset(&mut self, variant: EmbodimentVariant, command_scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = &variant.model;
        let noise = self.cfg.reset_noise;
        let q: Vec<f64> = m
            .nominal_pose
            .iter()
            .zip(&m.joints)
            .map(|(&q, j)| (q + noise * (2.0 * rng.random::<f64>() - 1.0)).clamp(j.limits[0], j.limits[1]))
            .collect();
        let world = World::from_variant(&variant, self.cfg.physics.clone());
        let height = world.kin.standing_height(m, &q);
        let mut state = world.pose_state(m, [0.0, height], 0.0, &q);
        let vx = sample_in(&mut rng, self.cfg.vx_range(command_scale));
        state.command = [T::lit(vx), T::zero(), T::zero()];
        self.next_push = if self.dr.enabled && self.dr.push_force > 0.0 {
            sample_in(&mut rng, self.dr.push_interval)
        } else {
            f64::INFINITY
        };
        self.push_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        self.command_scale = command_scale;
        self.variant = variant;
        self.world = world;
        self.state = state;
        self.prev_action = [T::zero(); NUM_SLOTS];
        self.est_velocity = [T::zero(); 2];
        self.episode_return = 0.0;
        let frame = self.frame();
        self.history.clear();
        for _ in 0..HISTORY_LEN {
            self.history.push_back(frame.clone());
        }
    }

    pub fn base_pitch(&self) -> T {
        self.state.bodies[self.world.base()].angle
    }

    pub fn base_velocity(&self) -> [T; 2] {
        self.state.bodies[self.world.base()].vel
    }

    /// Current observation frame.
    pub fn frame(&self) -> Vec<T> {
        let mut f = vec![T::zero(); FRAME_LEN];
        let q = self.world.joint_angles(&self.state);
        let qd = self.world.joint_rates(&self.state);
        self.mapping.phys_to_env_into(&q, &mut f[..NUM_SLOTS], true);
        self.mapping.phys_to_env_into(&qd, &mut f[NUM_SLOTS..2 * NUM_SLOTS], false);
        let base = &self.state.bodies[self.world.base()];
        let o = 2 * NUM_SLOTS;
        f[o] = base.omega;
        f[o + 1] = -base.angle.sin();
        f[o + 2] = -base.angle.cos();
        f[CMD_OFFSET..CMD_OFFSET + 3].copy_from_slice(&self.state.command);
        f[PREV_ACTION_OFFSET..PREV_ACTION_OFFSET + NUM_SLOTS].copy_from_slice(&self.prev_action);
        f[FRAME_LEN - 2] = self.est_velocity[0];
        f[FRAME_LEN - 1] = self.est_velocity[1];
        f
    }

    /// Oldest-first concatenation of the last [`HISTORY_LEN`] frames.
    pub fn observation_into(&self, out: &mut [T]) {
        for (k, f) in self.history.iter().enumerate() {
            out[k * FRAME_LEN..(k + 1) * FRAME_LEN].copy_from_slice(f);
        }
    }

    pub fn observation(&self) -> Vec<T> {
        let mut out = vec![T::zero(); FRAME_LEN * HISTORY_LEN];
        self.observation_into(&mut out);
        out
    }

    /// Physical PD targets for a unified action.
    pub fn joint_targets(&self, action: &[T]) -> Vec<T> {
        let clip = T::lit(self.cfg.action_clip);
        let scale = T::lit(self.cfg.action_scale);
        let mut a = [T::zero(); NUM_SLOTS];
        for (slot, v) in a.iter_mut().enumerate() {
            if self.mask.contains(slot) {
                *v = action[slot].max(-clip).min(clip) * scale;
            }
        }
        let mut q = vec![T::zero(); self.mapping.n_phys()];
        self.mapping.env_to_phys_into(&a, &mut q, true);
        q
    }

    /// Applies a unified action for one control step. `estimate` is the
    /// velocity estimate that enters the next frame. The caller resets the
    /// environment after a terminal step.
    pub fn step(&mut self, action: &[T], estimate: [T; 2]) -> StepResult<T> {
        let targets = self.joint_targets(action);
        let control_dt = self.cfg.physics.control_dt();
        let t0 = self.state.time;
        let push = if t0 + 1e-9 >= self.next_push {
            let angle = self.push_rng.random::<f64>() * std::f64::consts::TAU;
            let mag = self.dr.push_force * self.push_rng.random::<f64>();
            self.next_push = t0 + sample_in(&mut self.push_rng, self.dr.push_interval);
            [T::lit(mag * angle.cos()), T::lit(mag * angle.sin())]
        } else {
            [T::zero(); 2]
        };
        let tau = self.world.step(&mut self.state, Actuation::PdTarget(&targets), push);
        debug_assert!((self.state.time - t0 - control_dt).abs() < 1e-9);

        let mut masked = [T::zero(); NUM_SLOTS];
        for (slot, v) in masked.iter_mut().enumerate() {
            if self.mask.contains(slot) {
                *v = action[slot].max(-T::lit(self.cfg.action_clip)).min(T::lit(self.cfg.action_clip));
            }
        }
        let action_rate_sq: T = masked
            .iter()
            .zip(&self.prev_action)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum();
        let torque_sq: T = tau
            .iter()
            .zip(&self.variant.model.joints)
            .map(|(t, j)| {
                let r = *t / T::lit(j.tau_max);
                r * r
            })
            .sum();

        let finite = self.world.is_finite(&self.state);
        let base = self.state.bodies[self.world.base()];
        let inputs = RewardInputs {
            vx: base.vel[0],
            pitch: base.angle,
            pitch_rate: base.omega,
            base_z: base.pos[1],
            torque_sq,
            action_rate_sq,
            stance_width: stance_width(&self.world.contact_points(&self.state)),
            nominal_height: T::lit(self.variant.model.nominal_base_height),
            nominal_stance: T::lit(self.nominal_stance),
        };
        let (breakdown, reward) = if finite {
            let b = compute_reward(&inputs, &self.reward_cfg, self.state.command);
            (b, b.total)
        } else {
            (RewardBreakdown::default(), T::zero())
        };

        let steps = self.state.step as usize;
        let h_nom = self.variant.model.nominal_base_height;
        let done_reason = if !finite || !reward.is_finite() {
            Some(DoneReason::Fault)
        } else if base.pos[1].as_f64() < self.cfg.fall_height_ratio * h_nom {
            Some(DoneReason::FallHeight)
        } else if base.angle.abs().as_f64() > self.cfg.max_pitch {
            Some(DoneReason::FallPitch)
        } else if steps >= self.cfg.episode_limit {
            Some(DoneReason::Timeout)
        } else {
            None
        };
        let done = done_reason.is_some();

        self.episode_return += reward.as_f64();
        self.prev_action = masked;
        self.est_velocity = estimate;
        if finite {
            let frame = self.frame();
            self.history.pop_front();
            self.history.push_back(frame);
        }

        let row = TrajRow {
            step: self.state.step,
            time: self.state.time,
            base_x: base.pos[0].as_f64(),
            base_z: base.pos[1].as_f64(),
            pitch: base.angle.as_f64(),
            vx: base.vel[0].as_f64(),
            vz: base.vel[1].as_f64(),
            pitch_rate: base.omega.as_f64(),
            cmd_vx: self.state.command[0].as_f64(),
            reward: reward.as_f64(),
            done,
        };
        StepResult {
            reward,
            breakdown,
            done,
            done_reason,
            base_velocity: base.vel,
            episode: done_reason.map(|reason| EpisodeStats {
                ret: self.episode_return,
                length: steps,
                reason,
            }),
            row,
        }
    }
}

/// Horizontal extent of a set of contact points.
fn stance_width<T: Scalar>(points: &[[T; 2]]) -> T {
    let lo = points.iter().map(|p| p[0]).fold(T::infinity(), T::min);
    let hi = points.iter().map(|p| p[0]).fold(T::neg_infinity(), T::max);
    if hi >= lo {
        hi - lo
    } else {
        T::zero()
    }
}
