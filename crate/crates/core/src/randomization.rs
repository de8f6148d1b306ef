//! Domain randomization of rigid-body and joint dynamics.
//!
//! Every randomized quantity has a baseline relative half-width. The
//! effective half-width is `multiplier * baseline`; lower bounds are
//! clamped to 1% of nominal so physical quantities stay positive. Link
//! lengths, topology and roles are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::robot_model::RobotModel;

const POSITIVE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrConfig {
    pub enabled: bool,
    pub multiplier: f64,
    /// Relative half-widths at multiplier 1.
    pub mass: f64,
    pub inertia: f64,
    /// Half-width as a fraction of the link length.
    pub com_offset: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_max: f64,
    /// Ground friction coefficient range at multiplier 1.
    pub friction: [f64; 2],
    /// Largest push force on the base, N. Not scaled by the multiplier.
    pub push_force: f64,
    /// Seconds between pushes.
    pub push_interval: [f64; 2],
}

impl Default for DrConfig {
    fn default() -> Self {
        DrConfig {
            enabled: true,
            multiplier: 2.0,
            mass: 0.10,
            inertia: 0.10,
            com_offset: 0.05,
            kp: 0.10,
            kd: 0.10,
            tau_max: 0.10,
            friction: [0.6, 1.0],
            push_force: 30.0,
            push_interval: [4.0, 8.0],
        }
    }
}

impl DrConfig {
    pub fn disabled() -> Self {
        DrConfig {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn with_multiplier(multiplier: f64) -> Self {
        DrConfig {
            multiplier,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let widths = [
            ("multiplier", self.multiplier),
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("com_offset", self.com_offset),
            ("kp", self.kp),
            ("kd", self.kd),
            ("tau_max", self.tau_max),
            ("push_force", self.push_force),
        ];
        for (name, v) in widths {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("dr.{name} must be a nonnegative number, got {v}"));
            }
        }
        let [lo, hi] = self.friction;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(format!("dr.friction must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        let [a, b] = self.push_interval;
        if !(a.is_finite() && b.is_finite() && 0.0 < a && a <= b) {
            return Err(format!("dr.push_interval must satisfy 0 < lo <= hi, got [{a}, {b}]"));
        }
        Ok(())
    }

    /// Friction at the middle of the baseline range, used when DR is off.
    pub fn nominal_friction(&self) -> f64 {
        0.5 * (self.friction[0] + self.friction[1])
    }
}

/// Closed interval.
pub type Range = [f64; 2];

/// Effective sampling ranges for a configuration.
///
/// Scale quantities are multiplicative factors on the nominal value,
/// `com_offset` is an additive shift in units of link length, friction is
/// absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRanges {
    pub mass: Range,
    pub inertia: Range,
    pub com_offset: Range,
    pub kp: Range,
    pub kd: Range,
    pub tau_max: Range,
    pub friction: Range,
}

impl EffectiveRanges {
    pub fn as_table(&self) -> [(&'static str, Range); 7] {
        [
            ("mass", self.mass),
            ("inertia", self.inertia),
            ("com_offset", self.com_offset),
            ("kp", self.kp),
            ("kd", self.kd),
            ("tau_max", self.tau_max),
            ("friction", self.friction),
        ]
    }

    /// Interval containment for every quantity.
    pub fn contained_in(&self, other: &EffectiveRanges) -> bool {
        self.as_table()
            .iter()
            .zip(other.as_table().iter())
            .all(|((_, a), (_, b))| b[0] <= a[0] && a[1] <= b[1])
    }
}

fn scale_range(half: f64, multiplier: f64) -> Range {
    let h = half * multiplier;
    [(1.0 - h).max(POSITIVE_FLOOR), 1.0 + h]
}

pub fn effective_ranges(cfg: &DrConfig) -> EffectiveRanges {
    let m = if cfg.enabled { cfg.multiplier } else { 0.0 };
    let mid = cfg.nominal_friction();
    let half = 0.5 * (cfg.friction[1] - cfg.friction[0]) * m;
    EffectiveRanges {
        mass: scale_range(cfg.mass, m),
        inertia: scale_range(cfg.inertia, m),
        com_offset: [-cfg.com_offset * m, cfg.com_offset * m],
        kp: scale_range(cfg.kp, m),
        kd: scale_range(cfg.kd, m),
        tau_max: scale_range(cfg.tau_max, m),
        friction: [(mid - half).max(POSITIVE_FLOOR * mid), mid + half],
    }
}

/// One randomized embodiment, fixed for an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbodimentVariant {
    pub source: String,
    pub model: RobotModel,
    pub friction: f64,
    pub seed: u64,
}

impl EmbodimentVariant {
    /// The unperturbed model with nominal friction.
    pub fn nominal(m: &RobotModel, cfg: &DrConfig) -> Self {
        EmbodimentVariant {
            source: m.name.clone(),
            model: m.clone(),
            friction: cfg.nominal_friction(),
            seed: 0,
        }
    }
}

#[inline]
fn uniform(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    let u: f64 = rng.random();
    r[0] + (r[1] - r[0]) * u
}

pub fn sample_variant(m: &RobotModel, cfg: &DrConfig, seed: u64) -> EmbodimentVariant {
    let ranges = effective_ranges(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = m.clone();
    for link in &mut model.links {
        link.mass *= uniform(&mut rng, ranges.mass);
        link.inertia_com *= uniform(&mut rng, ranges.inertia);
        let shifted = link.com_offset + link.length * uniform(&mut rng, ranges.com_offset);
        link.com_offset = shifted.clamp(0.0, link.length);
    }
    for joint in &mut model.joints {
        joint.kp *= uniform(&mut rng, ranges.kp);
        joint.kd *= uniform(&mut rng, ranges.kd);
        joint.tau_max *= uniform(&mut rng, ranges.tau_max);
    }
    model.recompute_total_mass();
    let friction = uniform(&mut rng, ranges.friction);
    EmbodimentVariant {
        source: m.name.clone(),
        model,
        friction,
        seed,
    }
}
