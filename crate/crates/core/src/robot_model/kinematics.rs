//! Planar forward kinematics.
//!
//! Every link frame sits at the link's center of mass. At zero orientation
//! the link axis hangs straight down, proximal end on top, so the proximal
//! end is at local `(0, com_offset)` and the distal end at
//! `(0, com_offset - length)`. Angles are counter-clockwise in the x-z
//! plane.

use super::{JointId, LinkId, RobotModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub com: [f64; 2],
    pub angle: f64,
}

#[inline]
pub fn rotate(angle: f64, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Precomputed joint ordering and local attachment geometry.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub order: Vec<JointId>,
    /// Per joint: attachment point in the parent's COM frame.
    pub parent_anchor: Vec<[f64; 2]>,
    /// Per joint: attachment point in the child's COM frame.
    pub child_anchor: Vec<[f64; 2]>,
    /// Ground contact candidates: both ends of every leaf link.
    pub contacts: Vec<(LinkId, [f64; 2])>,
    base: LinkId,
    n_links: usize,
}

impl Kinematics {
    /// Requires a model whose topology is valid.
    pub fn new(m: &RobotModel) -> Self {
        let mut parent_anchor = Vec::with_capacity(m.joints.len());
        let mut child_anchor = Vec::with_capacity(m.joints.len());
        for j in &m.joints {
            let p = &m.links[j.parent];
            let a = j.anchor.unwrap_or([0.0, -p.length]);
            parent_anchor.push([a[0], a[1] + p.com_offset]);
            child_anchor.push([0.0, m.links[j.child].com_offset]);
        }
        let mut contacts = Vec::new();
        for l in m.leaf_links() {
            let link = &m.links[l];
            contacts.push((l, [0.0, link.com_offset]));
            contacts.push((l, [0.0, link.com_offset - link.length]));
        }
        Kinematics {
            order: m.joint_order(),
            parent_anchor,
            child_anchor,
            contacts,
            base: m.base_link,
            n_links: m.links.len(),
        }
    }

    /// Poses of every link for a base pose and physical joint angles.
    pub fn pose(&self, m: &RobotModel, base_com: [f64; 2], base_angle: f64, q: &[f64]) -> Vec<BodyPose> {
        let mut poses = vec![
            BodyPose {
                com: [0.0, 0.0],
                angle: 0.0
            };
            self.n_links
        ];
        poses[self.base] = BodyPose {
            com: base_com,
            angle: base_angle,
        };
        for &ji in &self.order {
            let j = &m.joints[ji];
            let parent = poses[j.parent];
            let pa = rotate(parent.angle, self.parent_anchor[ji]);
            let anchor = [parent.com[0] + pa[0], parent.com[1] + pa[1]];
            let angle = parent.angle + j.sign * q[ji];
            let ca = rotate(angle, self.child_anchor[ji]);
            poses[j.child] = BodyPose {
                com: [anchor[0] - ca[0], anchor[1] - ca[1]],
                angle,
            };
        }
        poses
    }

    pub fn contact_points(&self, poses: &[BodyPose]) -> Vec<[f64; 2]> {
        self.contacts
            .iter()
            .map(|&(l, local)| {
                let r = rotate(poses[l].angle, local);
                [poses[l].com[0] + r[0], poses[l].com[1] + r[1]]
            })
            .collect()
    }

    /// Base COM height that puts the lowest contact point on the ground
    /// with an upright base.
    pub fn standing_height(&self, m: &RobotModel, q: &[f64]) -> f64 {
        let poses = self.pose(m, [0.0, 0.0], 0.0, q);
        let lowest = self
            .contact_points(&poses)
            .iter()
            .map(|p| p[1])
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            -lowest
        } else {
            0.0
        }
    }

    /// Link COM heights at the nominal pose with the base at its nominal
    /// height.
    pub fn nominal_com_heights(&self, m: &RobotModel) -> Vec<f64> {
        self.pose(m, [0.0, m.nominal_base_height], 0.0, &m.nominal_pose)
            .iter()
            .map(|p| p.com[1])
            .collect()
    }
}
