//! Cross-embodiment locomotion pretraining on a family of planar legged
//! walkers.

pub mod checkpoint;
pub mod config;
pub mod descriptors;
pub mod eval;
pub mod nn;
pub mod randomization;
pub mod robot_model;
pub mod roster;
pub mod scalar;
pub mod sim;
pub mod transfer;
pub mod trainer;
pub mod unified_space;

pub use scalar::Scalar;

pub type PolicyF32 = nn::Policy<f32>;
pub type PolicyF64 = nn::Policy<f64>;
pub type WorldF32 = sim::World<f32>;
pub type WorldF64 = sim::World<f64>;
pub type WalkerEnvF32 = sim::WalkerEnv<f32>;
pub type WalkerEnvF64 = sim::WalkerEnv<f64>;
pub type TrainerF32 = trainer::Trainer<f32>;
pub type TrainerF64 = trainer::Trainer<f64>;
pub type TrainStateF32 = trainer::TrainState<f32>;
pub type TrainStateF64 = trainer::TrainState<f64>;
pub type CheckpointF32 = checkpoint::Checkpoint<f32>;
pub type CheckpointF64 = checkpoint::Checkpoint<f64>;
