//! Planar walker simulator: rigid-body dynamics, the velocity-command
//! locomotion task, reward and termination.

mod env;
mod reward;
mod world;

pub use env::{DoneReason, EnvConfig, EpisodeStats, StepResult, TrajRow, WalkerEnv, FRAME_LEN, HISTORY_LEN};
pub use reward::{compute_reward, RewardBreakdown, RewardConfig, RewardInputs};
pub use world::{pd_torque, pd_torques, Actuation, Body, PhysicsParams, SimState, World};
