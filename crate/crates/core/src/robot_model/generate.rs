//! Procedural family of planar walkers.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Joint, Kinematics, Link, ModelError, RobotModel};
use crate::roster::slot_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkerKind {
    /// Two legs hanging from an upright torso.
    Biped,
    /// Front and rear leg pairs under a horizontal torso. The front pair
    /// maps onto arm slots, the rear pair onto leg slots.
    QuadrupedPair,
}

/// Morphology parameters of the walker family.
///
/// Bounds: bipeds have exactly 3 segments per leg, quadruped pairs 2 or 3;
/// the three scales lie in `[0.5, 2.0]`; `jitter` in `[0, 0.2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerFamily {
    pub kind: WalkerKind,
    pub segments_per_leg: usize,
    #[serde(default = "one")]
    pub leg_length_scale: f64,
    #[serde(default = "one")]
    pub mass_scale: f64,
    #[serde(default = "one")]
    pub gain_scale: f64,
    /// Relative per-seed variation applied to lengths, masses and gains.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    0.05
}

impl WalkerFamily {
    pub fn biped() -> Self {
        WalkerFamily {
            kind: WalkerKind::Biped,
            segments_per_leg: 3,
            leg_length_scale: 1.0,
            mass_scale: 1.0,
            gain_scale: 1.0,
            jitter: default_jitter(),
        }
    }

    pub fn quadruped_pair(segments_per_leg: usize) -> Self {
        WalkerFamily {
            kind: WalkerKind::QuadrupedPair,
            segments_per_leg,
            ..Self::biped()
        }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let segs_ok = match self.kind {
            WalkerKind::Biped => self.segments_per_leg == 3,
            WalkerKind::QuadrupedPair => (2..=3).contains(&self.segments_per_leg),
        };
        if !segs_ok {
            return Err(ModelError::InvalidFamilyParams(format!(
                "{:?} does not support {} segments per leg",
                self.kind, self.segments_per_leg
            )));
        }
        for (name, v) in [
            ("leg_length_scale", self.leg_length_scale),
            ("mass_scale", self.mass_scale),
            ("gain_scale", self.gain_scale),
        ] {
            if !(0.5..=2.0).contains(&v) {
                return Err(ModelError::InvalidFamilyParams(format!("{name} = {v} outside [0.5, 2]")));
            }
        }
        if !(0.0..=0.2).contains(&self.jitter) {
            return Err(ModelError::InvalidFamilyParams(format!("jitter = {} outside [0, 0.2]", self.jitter)));
        }
        Ok(())
    }
}

struct SegmentSpec {
    name: &'static str,
    length: f64,
    mass: f64,
    kp: f64,
    kd: f64,
    tau_max: f64,
    nominal: f64,
    half_range: f64,
}

fn rod(name: String, length: f64, mass: f64) -> Link {
    Link {
        name,
        length,
        mass,
        com_offset: 0.5 * length,
        inertia_com: mass * length * length / 12.0,
    }
}

/// Deterministic walker for `(family, seed)`.
pub fn generate_walker(family: &WalkerFamily, seed: u64) -> Result<RobotModel, ModelError> {
    family.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jit = |rng: &mut ChaCha8Rng| 1.0 + family.jitter * (2.0 * rng.random::<f64>() - 1.0);

    let s = family.leg_length_scale;
    let ms = family.mass_scale;
    let gs = family.gain_scale;

    // (segment, roles per side) with the leaf segment carrying a flat foot
    let (base, pairs): (Link, Vec<([f64; 2], [&str; 2], Vec<SegmentSpec>)>) = match family.kind {
        WalkerKind::Biped => {
            let len = 0.5 * jit(&mut rng);
            let base = rod("torso".into(), len, 12.0 * ms * jit(&mut rng));
            // hips sit at the torso COM
            let anchor = [0.0, -0.5 * len];
            let leg = biped_leg(&mut rng, &mut jit, s, ms, gs);
            (base, vec![(anchor, ["left", "right"], leg)])
        }
        WalkerKind::QuadrupedPair => {
            let len = 0.7 * s * jit(&mut rng);
            let mut base = rod("body".into(), len, 10.0 * ms * jit(&mut rng));
            base.inertia_com = base.mass * len * len / 12.0;
            let n = family.segments_per_leg;
            let front = quad_leg(&mut rng, &mut jit, s, ms, gs, n, ["shoulder_pitch", "elbow_pitch", "wrist_pitch"]);
            let rear = quad_leg(&mut rng, &mut jit, s, ms, gs, n, ["hip_pitch", "knee_pitch", "ankle_pitch"]);
            let half = 0.5 * len * 0.85;
            (
                base,
                vec![
                    ([half, -0.5 * len], ["front_left", "front_right"], front),
                    ([-half, -0.5 * len], ["rear_left", "rear_right"], rear),
                ],
            )
        }
    };

    let mut links = vec![base];
    let mut joints = Vec::new();
    let mut nominal = Vec::new();
    for (anchor, sides, segs) in &pairs {
        for side in sides {
            let role_side = if side.ends_with("left") { "left" } else { "right" };
            let mut parent = 0;
            for (k, seg) in segs.iter().enumerate() {
                links.push(rod(format!("{side}_{}", seg_link_name(seg.name)), seg.length, seg.mass));
                let child = links.len() - 1;
                let role = slot_index(&format!("{role_side}_{}", seg.name));
                joints.push(Joint {
                    name: format!("{side}_{}", seg.name),
                    parent,
                    child,
                    limits: [seg.nominal - seg.half_range, seg.nominal + seg.half_range],
                    velocity_limit: 20.0,
                    kp: seg.kp,
                    kd: seg.kd,
                    tau_max: seg.tau_max,
                    unified_role: role,
                    sign: 1.0,
                    offset: seg.nominal,
                    anchor: if k == 0 { Some(*anchor) } else { None },
                });
                nominal.push(seg.nominal);
                parent = child;
            }
        }
    }

    let name = match family.kind {
        WalkerKind::Biped => format!("biped-s{seed}"),
        WalkerKind::QuadrupedPair => format!("quad{}-s{seed}", family.segments_per_leg),
    };
    let mut m = RobotModel::new(name, links, joints, 0, 0.0, nominal);
    let kin = Kinematics::new(&m);
    m.nominal_base_height = kin.standing_height(&m, &m.nominal_pose);
    m.metadata.insert("generator".into(), serde_json::to_value(family).expect("family serializes"));
    m.metadata.insert("seed".into(), seed.into());
    Ok(m)
}

fn seg_link_name(joint: &str) -> &'static str {
    match joint {
        "hip_pitch" => "thigh",
        "knee_pitch" => "shin",
        "ankle_pitch" => "foot",
        "shoulder_pitch" => "upper_leg",
        "elbow_pitch" => "lower_leg",
        "wrist_pitch" => "paw",
        _ => "segment",
    }
}

fn biped_leg(
    rng: &mut ChaCha8Rng,
    jit: &mut impl FnMut(&mut ChaCha8Rng) -> f64,
    s: f64,
    ms: f64,
    gs: f64,
) -> Vec<SegmentSpec> {
    // knee forward, shin raked back so the ankle sits behind the hip and
    // the torso COM projects onto the middle of the foot
    let hip = 0.1;
    let knee = -0.5;
    let ankle = FRAC_PI_2 - hip - knee;
    vec![
        SegmentSpec {
            name: "hip_pitch",
            length: 0.35 * s * jit(rng),
            mass: 2.0 * ms * jit(rng),
            kp: 150.0 * gs * jit(rng),
            kd: 3.0 * gs,
            tau_max: 100.0 * gs,
            nominal: hip,
            half_range: 1.2,
        },
        SegmentSpec {
            name: "knee_pitch",
            length: 0.35 * s * jit(rng),
            mass: 1.5 * ms * jit(rng),
            kp: 150.0 * gs * jit(rng),
            kd: 3.0 * gs,
            tau_max: 100.0 * gs,
            nominal: knee,
            half_range: 1.2,
        },
        SegmentSpec {
            name: "ankle_pitch",
            length: 0.24 * s * jit(rng),
            mass: 1.0 * ms * jit(rng),
            kp: 250.0 * gs * jit(rng),
            kd: 3.0 * gs,
            tau_max: 60.0 * gs,
            nominal: ankle,
            half_range: 0.8,
        },
    ]
}

fn quad_leg(
    rng: &mut ChaCha8Rng,
    jit: &mut impl FnMut(&mut ChaCha8Rng) -> f64,
    s: f64,
    ms: f64,
    gs: f64,
    segments: usize,
    roles: [&'static str; 3],
) -> Vec<SegmentSpec> {
    let upper = 0.3;
    let lower = -0.6;
    let mut out = vec![
        SegmentSpec {
            name: roles[0],
            length: 0.28 * s * jit(rng),
            mass: 1.0 * ms * jit(rng),
            kp: 100.0 * gs * jit(rng),
            kd: 2.0 * gs,
            tau_max: 60.0 * gs,
            nominal: upper,
            half_range: 1.2,
        },
        SegmentSpec {
            name: roles[1],
            length: 0.28 * s * jit(rng),
            mass: 0.7 * ms * jit(rng),
            kp: 100.0 * gs * jit(rng),
            kd: 2.0 * gs,
            tau_max: 60.0 * gs,
            nominal: lower,
            half_range: 1.2,
        },
    ];
    if segments == 3 {
        out.push(SegmentSpec {
            name: roles[2],
            length: 0.12 * s * jit(rng),
            mass: 0.4 * ms * jit(rng),
            kp: 40.0 * gs * jit(rng),
            kd: 0.8 * gs,
            tau_max: 30.0 * gs,
            nominal: FRAC_PI_2 - upper - lower,
            half_range: 0.8,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::validate_model;

    #[test]
    fn biped_has_six_mapped_joints_and_is_deterministic() {
        let a = generate_walker(&WalkerFamily::biped(), 7).unwrap();
        let b = generate_walker(&WalkerFamily::biped(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_joints(), 6);
        assert!(validate_model(&a).is_empty(), "{:?}", validate_model(&a));
        assert!(a.joints.iter().all(|j| j.unified_role.is_some()));
        let c = generate_walker(&WalkerFamily::biped(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn quadruped_pair_maps_all_twelve() {
        let m = generate_walker(&WalkerFamily::quadruped_pair(3), 3).unwrap();
        assert_eq!(m.n_joints(), 12);
        assert!(validate_model(&m).is_empty());
        let roles: Vec<_> = m.joints.iter().map(|j| j.role_name()).collect();
        assert!(roles.contains(&"left_shoulder_pitch"));
        assert!(roles.contains(&"right_wrist_pitch"));
        assert!(roles.contains(&"right_ankle_pitch"));
        let two = generate_walker(&WalkerFamily::quadruped_pair(2), 3).unwrap();
        assert_eq!(two.n_joints(), 8);
    }

    #[test]
    fn leg_scale_scales_standing_height() {
        let base = generate_walker(&WalkerFamily::biped(), 7).unwrap();
        let tall = generate_walker(
            &WalkerFamily {
                leg_length_scale: 1.5,
                ..WalkerFamily::biped()
            },
            7,
        )
        .unwrap();
        // closed form: hip-to-ground distance of the thigh/shin chain with a flat foot
        let z = |m: &RobotModel| {
            let q = &m.nominal_pose;
            m.links[1].length * q[0].cos() + m.links[2].length * (q[0] + q[1]).cos()
        };
        assert!((base.nominal_base_height - z(&base)).abs() < 1e-12);
        let ratio = tall.nominal_base_height / base.nominal_base_height;
        assert!((ratio - 1.5).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn rejects_out_of_bounds_params() {
        let bad = WalkerFamily {
            segments_per_leg: 2,
            ..WalkerFamily::biped()
        };
        assert!(matches!(generate_walker(&bad, 0), Err(ModelError::InvalidFamilyParams(_))));
        let bad = WalkerFamily {
            mass_scale: 3.0,
            ..WalkerFamily::biped()
        };
        assert!(generate_walker(&bad, 0).is_err());
    }
}
