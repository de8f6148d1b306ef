//! Locomotion reward shared by every embodiment.
//!
//! Term structure is common; the height target and stance width come from
//! the embodiment. All terms are multiplied by `scale` (the control period)
//! so that returns do not depend on the control rate.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub scale: f64,
    pub lin_vel: f64,
    pub pitch_rate: f64,
    pub height: f64,
    pub orientation: f64,
    pub torque: f64,
    pub action_rate: f64,
    pub alive: f64,
    pub stance: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            scale: 0.02,
            lin_vel: 1.5,
            pitch_rate: 0.25,
            height: 0.5,
            orientation: 1.0,
            torque: 0.02,
            action_rate: 0.01,
            alive: 0.5,
            stance: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("scale", self.scale),
            ("lin_vel", self.lin_vel),
            ("pitch_rate", self.pitch_rate),
            ("height", self.height),
            ("orientation", self.orientation),
            ("torque", self.torque),
            ("action_rate", self.action_rate),
            ("alive", self.alive),
            ("stance", self.stance),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("reward.{name} must be a nonnegative number, got {v}"));
            }
        }
        Ok(())
    }
}

/// Quantities the reward reads from a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs<T> {
    pub vx: T,
    pub pitch: T,
    pub pitch_rate: T,
    pub base_z: T,
    /// `sum (tau / tau_max)^2` over joints.
    pub torque_sq: T,
    /// `sum (a_t - a_{t-1})^2` over unified slots.
    pub action_rate_sq: T,
    /// Horizontal spread of the contact points.
    pub stance_width: T,
    /// Per-embodiment coefficients.
    pub nominal_height: T,
    pub nominal_stance: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown<T> {
    pub lin_vel: T,
    pub pitch_rate: T,
    pub height: T,
    pub orientation: T,
    pub torque: T,
    pub action_rate: T,
    pub stance: T,
    pub alive: T,
    pub total: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    pub fn terms(&self) -> [(&'static str, T); 8] {
        [
            ("lin_vel", self.lin_vel),
            ("pitch_rate", self.pitch_rate),
            ("height", self.height),
            ("orientation", self.orientation),
            ("torque", self.torque),
            ("action_rate", self.action_rate),
            ("stance", self.stance),
            ("alive", self.alive),
        ]
    }
}

pub fn compute_reward<T: Scalar>(x: &RewardInputs<T>, cfg: &RewardConfig, command: [T; 3]) -> RewardBreakdown<T> {
    let w = |v: f64| T::lit(v * cfg.scale);
    let ev = command[0] - x.vx;
    let dz = x.base_z - x.nominal_height;
    let ds = x.stance_width - x.nominal_stance;
    let mut b = RewardBreakdown {
        lin_vel: w(cfg.lin_vel) * (-(ev * ev) / T::lit(0.25)).exp(),
        pitch_rate: w(cfg.pitch_rate) * (-(x.pitch_rate * x.pitch_rate) / T::lit(0.25)).exp(),
        height: w(cfg.height) * (-(dz * dz) / T::lit(0.01)).exp(),
        orientation: -w(cfg.orientation) * x.pitch * x.pitch,
        torque: -w(cfg.torque) * x.torque_sq,
        action_rate: -w(cfg.action_rate) * x.action_rate_sq,
        stance: -w(cfg.stance) * ds * ds,
        alive: w(cfg.alive),
        total: T::zero(),
    };
    b.total = b.terms().iter().map(|(_, v)| *v).sum();
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect() -> RewardInputs<f64> {
        RewardInputs {
            vx: 0.5,
            pitch: 0.0,
            pitch_rate: 0.0,
            base_z: 0.8,
            torque_sq: 0.0,
            action_rate_sq: 0.0,
            stance_width: 0.3,
            nominal_height: 0.8,
            nominal_stance: 0.3,
        }
    }

    #[test]
    fn perfect_tracking_sums_positive_weights() {
        let cfg = RewardConfig {
            scale: 1.0,
            ..Default::default()
        };
        let b = compute_reward(&perfect(), &cfg, [0.5, 0.0, 0.0]);
        assert_eq!(b.lin_vel, cfg.lin_vel);
        assert_eq!(b.pitch_rate, cfg.pitch_rate);
        assert_eq!(b.height, cfg.height);
        let expected = cfg.lin_vel + cfg.pitch_rate + cfg.height + cfg.alive;
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn tracking_kernel_value() {
        let cfg = RewardConfig {
            scale: 1.0,
            lin_vel: 1.0,
            ..Default::default()
        };
        let mut x = perfect();
        x.vx = 0.0;
        let b = compute_reward(&x, &cfg, [0.5, 0.0, 0.0]);
        assert!((b.lin_vel - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let cfg = RewardConfig {
            stance: 0.3,
            ..Default::default()
        };
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..500 {
            let x = RewardInputs {
                vx: next(),
                pitch: next(),
                pitch_rate: 4.0 * next(),
                base_z: 0.8 + next(),
                torque_sq: 3.0 * (next() + 0.5),
                action_rate_sq: next() + 0.5,
                stance_width: next(),
                nominal_height: 0.8,
                nominal_stance: 0.1,
            };
            let b = compute_reward(&x, &cfg, [next(), 0.0, 0.0]);
            let sum: f64 = b.terms().iter().map(|t| t.1).sum();
            assert!((sum - b.total).abs() < 1e-12);
            assert!(b.lin_vel > 0.0 && b.lin_vel <= cfg.lin_vel * cfg.scale);
        }
    }
}
