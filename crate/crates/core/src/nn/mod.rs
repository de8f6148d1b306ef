//! Networks used by the locomotion policy.

pub mod mlp;
pub mod norm;
pub mod policy;

pub use mlp::{elu, elu_grad, Dense, Mlp, MlpCache};
pub use norm::RunningNorm;
pub use policy::{
    clamp_log_std, gaussian_entropy, gaussian_log_prob, log_std_min, sample_action, ActOutput, DescriptorMode, Policy,
    PolicyConfig, PolicyGrad, ACTION_LEN, LOG_STD_MAX, OBS_LEN,
};
