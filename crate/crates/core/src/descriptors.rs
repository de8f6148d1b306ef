//! Embodiment descriptors laid out in unified slot order.
//!
//! Blocks, in order:
//! - joint dynamics: `(kp, kd, tau_max)` per slot, 32 x 3
//! - rigid-body dynamics: `(mass, COM height at nominal pose, inertia)` of
//!   each slot's child link, plus a final base row, 33 x 3
//! - kinematics: `(axis sign, limit lo, limit hi)` per slot, 32 x 3
//! - geometry: child link length per slot, 32 x 1
//!
//! Unmapped slots are zero rows everywhere.

use crate::robot_model::{Kinematics, RobotModel};
use crate::roster::NUM_SLOTS;
use crate::unified_space::JointMapping;

pub const JD_LEN: usize = NUM_SLOTS * 3;
pub const RD_LEN: usize = (NUM_SLOTS + 1) * 3;
pub const KINE_LEN: usize = NUM_SLOTS * 3;
pub const GEOM_LEN: usize = NUM_SLOTS;
pub const DESCRIPTOR_LEN: usize = JD_LEN + RD_LEN + KINE_LEN + GEOM_LEN;

const RD_OFFSET: usize = JD_LEN;
const KINE_OFFSET: usize = JD_LEN + RD_LEN;
const GEOM_OFFSET: usize = JD_LEN + RD_LEN + KINE_LEN;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbodimentDescriptor {
    z: Vec<f64>,
}

impl EmbodimentDescriptor {
    pub fn z_e(&self) -> &[f64] {
        &self.z
    }

    pub fn z_jd(&self) -> &[f64] {
        &self.z[..RD_OFFSET]
    }

    pub fn z_rd(&self) -> &[f64] {
        &self.z[RD_OFFSET..KINE_OFFSET]
    }

    pub fn z_kine(&self) -> &[f64] {
        &self.z[KINE_OFFSET..GEOM_OFFSET]
    }

    pub fn z_geom(&self) -> &[f64] {
        &self.z[GEOM_OFFSET..]
    }

    /// `(mass, height, inertia)` row of the base.
    pub fn base_row(&self) -> [f64; 3] {
        let r = &self.z_rd()[NUM_SLOTS * 3..];
        [r[0], r[1], r[2]]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.z
    }
}

pub fn compute_descriptor(m: &RobotModel, map: &JointMapping) -> EmbodimentDescriptor {
    let heights = Kinematics::new(m).nominal_com_heights(m);
    let mut z = vec![0.0; DESCRIPTOR_LEN];
    for slot in 0..NUM_SLOTS {
        let Some(p) = map.slot_to_phys[slot] else {
            continue;
        };
        let j = &m.joints[p];
        let child = &m.links[j.child];
        z[3 * slot..3 * slot + 3].copy_from_slice(&[j.kp, j.kd, j.tau_max]);
        let rd = RD_OFFSET + 3 * slot;
        z[rd..rd + 3].copy_from_slice(&[child.mass, heights[j.child], child.inertia_com]);
        let kin = KINE_OFFSET + 3 * slot;
        z[kin..kin + 3].copy_from_slice(&[j.sign, j.limits[0], j.limits[1]]);
        z[GEOM_OFFSET + slot] = child.length;
    }
    let base = &m.links[m.base_link];
    let rd = RD_OFFSET + 3 * NUM_SLOTS;
    z[rd..rd + 3].copy_from_slice(&[base.mass, heights[m.base_link], base.inertia_com]);
    EmbodimentDescriptor { z }
}

/// Euclidean distance between the flat descriptors.
pub fn descriptor_distance(a: &EmbodimentDescriptor, b: &EmbodimentDescriptor) -> f64 {
    a.z.iter()
        .zip(&b.z)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-column standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DescriptorStats {
    /// Columns with (near) zero spread get unit scale so they map to 0.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; DESCRIPTOR_LEN];
        let mut sq = vec![0.0; DESCRIPTOR_LEN];
        for s in samples {
            n += 1;
            for (i, &v) in s.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                let sd = var.sqrt();
                if sd < 1e-6 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        DescriptorStats { mean, std }
    }

    pub fn identity() -> Self {
        DescriptorStats {
            mean: vec![0.0; DESCRIPTOR_LEN],
            std: vec![1.0; DESCRIPTOR_LEN],
        }
    }

    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::test_models::chain;
    use crate::robot_model::{generate_walker, WalkerFamily};
    use crate::roster::ROSTER;
    use crate::unified_space::build_mapping;

    /// Independent per-slot lookup by role name.
    fn oracle(m: &RobotModel) -> Vec<f64> {
        let heights = Kinematics::new(m).nominal_com_heights(m);
        let mut jd = Vec::new();
        let mut rd = Vec::new();
        let mut kine = Vec::new();
        let mut geom = Vec::new();
        for role in ROSTER {
            match m.joints.iter().find(|j| j.role_name() == role) {
                Some(j) => {
                    let c = &m.links[j.child];
                    jd.extend([j.kp, j.kd, j.tau_max]);
                    rd.extend([c.mass, heights[j.child], c.inertia_com]);
                    kine.extend([j.sign, j.limits[0], j.limits[1]]);
                    geom.push(c.length);
                }
                None => {
                    jd.extend([0.0; 3]);
                    rd.extend([0.0; 3]);
                    kine.extend([0.0; 3]);
                    geom.push(0.0);
                }
            }
        }
        let b = &m.links[m.base_link];
        rd.extend([b.mass, heights[m.base_link], b.inertia_com]);
        [jd, rd, kine, geom].concat()
    }

    #[test]
    fn layout_length() {
        assert_eq!(DESCRIPTOR_LEN, 323);
    }

    #[test]
    fn matches_role_lookup_oracle() {
        let m = generate_walker(&WalkerFamily::quadruped_pair(3), 4).unwrap();
        let d = compute_descriptor(&m, &build_mapping(&m).unwrap());
        assert_eq!(d.z_e(), oracle(&m).as_slice());
    }

    #[test]
    fn file_order_invariance() {
        let m = generate_walker(&WalkerFamily::biped(), 3).unwrap();
        let d = compute_descriptor(&m, &build_mapping(&m).unwrap());
        // reverse the joint list; parents are referenced by id so the tree is intact
        let mut p = m.clone();
        p.joints.reverse();
        p.nominal_pose.reverse();
        let dp = compute_descriptor(&p, &build_mapping(&p).unwrap());
        assert_eq!(d, dp);
        assert_eq!(dp.z_e(), oracle(&p).as_slice());
    }

    #[test]
    fn zero_mapped_slots_leave_only_base_row() {
        let mut m = chain();
        m.joints.iter_mut().for_each(|j| j.unified_role = None);
        let d = compute_descriptor(&m, &build_mapping(&m).unwrap());
        let nonzero: Vec<usize> = d.z_e().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        let base = RD_OFFSET + 3 * NUM_SLOTS;
        assert!(nonzero.iter().all(|&i| (base..base + 3).contains(&i)));
        assert_eq!(d.base_row()[0], 5.0);
        assert_eq!(d.base_row()[1], m.nominal_base_height);
    }

    #[test]
    fn mass_scaling_is_linear() {
        let m = generate_walker(&WalkerFamily::biped(), 9).unwrap();
        let mut heavy = m.clone();
        heavy.links.iter_mut().for_each(|l| l.mass *= 2.5);
        let map = build_mapping(&m).unwrap();
        let a = compute_descriptor(&m, &map);
        let b = compute_descriptor(&heavy, &map);
        for row in 0..=NUM_SLOTS {
            assert_eq!(b.z_rd()[3 * row], 2.5 * a.z_rd()[3 * row]);
        }
    }

    #[test]
    fn distance_properties() {
        let m = generate_walker(&WalkerFamily::biped(), 1).unwrap();
        let map = build_mapping(&m).unwrap();
        let a = compute_descriptor(&m, &map);
        let mut b = a.clone();
        b.z[GEOM_OFFSET + 3] += 0.125;
        assert_eq!(descriptor_distance(&a, &a), 0.0);
        assert_eq!(descriptor_distance(&a, &b), descriptor_distance(&b, &a));
        assert!((descriptor_distance(&a, &b) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn standardization_zeroes_constant_columns() {
        let a = vec![1.0; DESCRIPTOR_LEN];
        let mut b = vec![1.0; DESCRIPTOR_LEN];
        b[0] = 3.0;
        let stats = DescriptorStats::fit([a.as_slice(), b.as_slice()]);
        let s = stats.standardize(&b);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 0.0);
    }
}
