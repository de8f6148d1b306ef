//! Planar articulated robot descriptions: types, validation, kinematics,
//! the JSON document format and the procedural walker family.

mod document;
mod generate;
mod kinematics;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::roster::ROSTER;

pub use document::{parse_model, parse_model_str, serialize_model, ParseOptions};
pub use generate::{generate_walker, WalkerFamily, WalkerKind};
pub use kinematics::{BodyPose, Kinematics};

pub type LinkId = usize;
pub type JointId = usize;

/// Tolerance used when checking the derived total mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    /// Meters, proximal to distal end.
    pub length: f64,
    /// Kilograms.
    pub mass: f64,
    /// Meters along the link axis from the proximal end.
    pub com_offset: f64,
    /// kg m^2 about the center of mass.
    pub inertia_com: f64,
}

/// A pitch-revolute joint.
///
/// The physical joint angle is `sign * (theta_child - theta_parent)`, so
/// `sign` is the direction of the joint axis in the sagittal plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: LinkId,
    pub child: LinkId,
    /// `[lo, hi]` in radians.
    pub limits: [f64; 2],
    pub velocity_limit: f64,
    pub kp: f64,
    pub kd: f64,
    pub tau_max: f64,
    /// Roster slot index, `None` when unmapped.
    pub unified_role: Option<usize>,
    pub sign: f64,
    /// Physical angle of the standardized neutral pose.
    pub offset: f64,
    /// Attachment point in the parent frame, measured from the parent's
    /// proximal end (x forward, z along the hanging axis). Defaults to the
    /// parent's distal end.
    pub anchor: Option<[f64; 2]>,
}

impl Joint {
    pub fn role_name(&self) -> &'static str {
        match self.unified_role {
            Some(slot) => ROSTER[slot],
            None => crate::roster::UNMAPPED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub base_link: LinkId,
    /// Height of the base center of mass when standing at the nominal pose.
    pub nominal_base_height: f64,
    pub nominal_pose: Vec<f64>,
    pub total_mass: f64,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing link: {0}")]
    MissingLink(String),
    #[error("cycle detected at link {0}")]
    CycleDetected(String),
    #[error("duplicate unified role: {0}")]
    DuplicateRole(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("unknown unified role: {0}")]
    UnknownRole(String),
    #[error("invalid family parameters: {0}")]
    InvalidFamilyParams(String),
}

/// One invariant violation found by [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingLink(String),
    CycleDetected(String),
    DuplicateRole(String),
    OutOfRange(String),
    Topology(String),
    /// Legal, but the robot cannot be driven through the unified space.
    NoMappedJoints,
}

impl Violation {
    /// Warnings do not make a model unusable.
    pub fn is_error(&self) -> bool {
        !matches!(self, Violation::NoMappedJoints)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingLink(s) => write!(f, "missing link: {s}"),
            Violation::CycleDetected(s) => write!(f, "cycle detected at link {s}"),
            Violation::DuplicateRole(s) => write!(f, "duplicate unified role: {s}"),
            Violation::OutOfRange(s) => write!(f, "out of range: {s}"),
            Violation::Topology(s) => write!(f, "topology: {s}"),
            Violation::NoMappedJoints => write!(f, "no joint is mapped into the unified space"),
        }
    }
}

impl From<Violation> for ModelError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::MissingLink(s) => ModelError::MissingLink(s),
            Violation::CycleDetected(s) => ModelError::CycleDetected(s),
            Violation::DuplicateRole(s) => ModelError::DuplicateRole(s),
            Violation::OutOfRange(s) => ModelError::OutOfRange(s),
            Violation::Topology(s) => ModelError::Topology(s),
            Violation::NoMappedJoints => ModelError::Topology("no mapped joints".into()),
        }
    }
}

impl RobotModel {
    /// Builds a model and fills the derived fields. Does not validate.
    pub fn new(
        name: impl Into<String>,
        links: Vec<Link>,
        joints: Vec<Joint>,
        base_link: LinkId,
        nominal_base_height: f64,
        nominal_pose: Vec<f64>,
    ) -> Self {
        let total_mass = links.iter().map(|l| l.mass).sum();
        RobotModel {
            name: name.into(),
            links,
            joints,
            base_link,
            nominal_base_height,
            nominal_pose,
            total_mass,
            metadata: BTreeMap::new(),
        }
    }

    pub fn recompute_total_mass(&mut self) {
        self.total_mass = self.links.iter().map(|l| l.mass).sum();
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn link_by_name(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_by_name(&self, name: &str) -> Option<JointId> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// The joint whose child is `link`, if any.
    pub fn parent_joint(&self, link: LinkId) -> Option<JointId> {
        self.joints.iter().position(|j| j.child == link)
    }

    /// Links that are not the base and have no child joints.
    pub fn leaf_links(&self) -> Vec<LinkId> {
        (0..self.links.len())
            .filter(|&l| l != self.base_link && !self.joints.iter().any(|j| j.parent == l))
            .collect()
    }

    /// Joints ordered so that every parent link is placed before its
    /// children. Requires a valid tree.
    pub fn joint_order(&self) -> Vec<JointId> {
        let mut order = Vec::with_capacity(self.joints.len());
        let mut frontier = vec![self.base_link];
        while let Some(link) = frontier.pop() {
            // reverse so that file order is kept among siblings
            let children: Vec<JointId> = (0..self.joints.len())
                .filter(|&j| self.joints[j].parent == link)
                .collect();
            for &j in &children {
                order.push(j);
            }
            for &j in children.iter().rev() {
                frontier.push(self.joints[j].child);
            }
        }
        order
    }

    /// Order-sensitive fingerprint of the structural fields: topology,
    /// roles, signs and link lengths.
    pub fn topology_hash(&self) -> u64 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.base_link as u64).to_le_bytes());
        for l in &self.links {
            h.update(l.name.as_bytes());
            h.update(&l.length.to_le_bytes());
        }
        for j in &self.joints {
            h.update(j.name.as_bytes());
            h.update(&(j.parent as u64).to_le_bytes());
            h.update(&(j.child as u64).to_le_bytes());
            h.update(j.role_name().as_bytes());
            h.update(&j.sign.to_le_bytes());
            if let Some(a) = j.anchor {
                h.update(&a[0].to_le_bytes());
                h.update(&a[1].to_le_bytes());
            }
        }
        let lo = h.finalize() as u64;
        let mut h2 = crc32fast::Hasher::new_with_initial(0x9e37_79b9);
        h2.update(&lo.to_le_bytes());
        h2.update(&(self.joints.len() as u64).to_le_bytes());
        (h2.finalize() as u64) << 32 | lo
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Every invariant violation of `m`. Never panics.
pub fn validate_model(m: &RobotModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_links = m.links.len();

    if m.links.is_empty() {
        out.push(Violation::Topology("model has no links".into()));
        return out;
    }
    if m.base_link >= n_links {
        out.push(Violation::MissingLink(format!("base link #{}", m.base_link)));
    }
    for (i, l) in m.links.iter().enumerate() {
        if m.links[..i].iter().any(|o| o.name == l.name) {
            out.push(Violation::Topology(format!("duplicate link name {}", l.name)));
        }
        if !positive(l.length) {
            out.push(Violation::OutOfRange(format!("link {} length {}", l.name, l.length)));
        }
        if !positive(l.mass) {
            out.push(Violation::OutOfRange(format!("link {} mass {}", l.name, l.mass)));
        }
        if !positive(l.inertia_com) {
            out.push(Violation::OutOfRange(format!(
                "link {} inertia {}",
                l.name, l.inertia_com
            )));
        }
        if !(l.com_offset.is_finite() && l.com_offset >= 0.0 && l.com_offset <= l.length) {
            out.push(Violation::OutOfRange(format!(
                "link {} com_offset {} outside [0, {}]",
                l.name, l.com_offset, l.length
            )));
        }
    }

    let mut links_ok = true;
    for (i, j) in m.joints.iter().enumerate() {
        if m.joints[..i].iter().any(|o| o.name == j.name) {
            out.push(Violation::Topology(format!("duplicate joint name {}", j.name)));
        }
        for (what, id) in [("parent", j.parent), ("child", j.child)] {
            if id >= n_links {
                links_ok = false;
                out.push(Violation::MissingLink(format!("joint {} {what} #{id}", j.name)));
            }
        }
        let [lo, hi] = j.limits;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            out.push(Violation::OutOfRange(format!("joint {} limits [{lo}, {hi}]", j.name)));
        }
        if !positive(j.velocity_limit) {
            out.push(Violation::OutOfRange(format!("joint {} velocity_limit", j.name)));
        }
        if !positive(j.kp) {
            out.push(Violation::OutOfRange(format!("joint {} kp {}", j.name, j.kp)));
        }
        if !(j.kd.is_finite() && j.kd >= 0.0) {
            out.push(Violation::OutOfRange(format!("joint {} kd {}", j.name, j.kd)));
        }
        if !positive(j.tau_max) {
            out.push(Violation::OutOfRange(format!("joint {} tau_max {}", j.name, j.tau_max)));
        }
        if j.sign != 1.0 && j.sign != -1.0 {
            out.push(Violation::OutOfRange(format!("joint {} sign {}", j.name, j.sign)));
        }
        if !j.offset.is_finite() {
            out.push(Violation::OutOfRange(format!("joint {} offset", j.name)));
        }
        if let Some(a) = j.anchor {
            if !(a[0].is_finite() && a[1].is_finite()) {
                out.push(Violation::OutOfRange(format!("joint {} anchor", j.name)));
            }
        }
        if let Some(slot) = j.unified_role {
            if slot >= ROSTER.len() {
                out.push(Violation::OutOfRange(format!("joint {} role #{slot}", j.name)));
            } else if m.joints[..i].iter().any(|o| o.unified_role == Some(slot)) {
                out.push(Violation::DuplicateRole(ROSTER[slot].to_string()));
            }
        }
    }

    if links_ok && m.base_link < n_links {
        check_tree(m, &mut out);
    }

    if m.nominal_pose.len() != m.joints.len() {
        out.push(Violation::OutOfRange(format!(
            "nominal_pose has {} entries for {} joints",
            m.nominal_pose.len(),
            m.joints.len()
        )));
    } else {
        for (j, &q) in m.joints.iter().zip(&m.nominal_pose) {
            let [lo, hi] = j.limits;
            if !(q.is_finite() && q >= lo && q <= hi) {
                out.push(Violation::OutOfRange(format!(
                    "nominal pose of joint {} = {q} outside [{lo}, {hi}]",
                    j.name
                )));
            }
        }
    }

    if !positive(m.nominal_base_height) {
        out.push(Violation::OutOfRange(format!(
            "nominal_base_height {}",
            m.nominal_base_height
        )));
    }
    let mass_sum: f64 = m.links.iter().map(|l| l.mass).sum();
    if !((m.total_mass - mass_sum).abs() <= MASS_TOLERANCE) {
        out.push(Violation::OutOfRange(format!(
            "total_mass {} differs from link sum {mass_sum}",
            m.total_mass
        )));
    }
    if !m.joints.is_empty() && m.joints.iter().all(|j| j.unified_role.is_none()) {
        out.push(Violation::NoMappedJoints);
    }
    out
}

fn check_tree(m: &RobotModel, out: &mut Vec<Violation>) {
    let n_links = m.links.len();
    let mut parent_of: Vec<Option<LinkId>> = vec![None; n_links];
    for j in &m.joints {
        if j.child == m.base_link {
            out.push(Violation::Topology(format!(
                "base link {} is the child of joint {}",
                m.links[j.child].name, j.name
            )));
            continue;
        }
        if parent_of[j.child].is_some() {
            out.push(Violation::Topology(format!(
                "link {} is the child of more than one joint",
                m.links[j.child].name
            )));
            continue;
        }
        parent_of[j.child] = Some(j.parent);
    }
    let mut reported_cycle = vec![false; n_links];
    for start in 0..n_links {
        if start == m.base_link {
            continue;
        }
        if parent_of[start].is_none() {
            out.push(Violation::Topology(format!(
                "link {} is not attached by any joint",
                m.links[start].name
            )));
            continue;
        }
        // walk to the base; more than n_links hops means a cycle
        let mut cur = start;
        let mut hops = 0;
        while cur != m.base_link {
            match parent_of[cur] {
                Some(p) => cur = p,
                None => break,
            }
            hops += 1;
            if hops > n_links {
                if !reported_cycle[cur] {
                    reported_cycle[cur] = true;
                    out.push(Violation::CycleDetected(m.links[cur].name.clone()));
                }
                break;
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;

    #[test]
    fn chain_is_valid() {
        assert!(validate_model(&chain()).is_empty());
        assert_eq!(chain().total_mass, 7.0);
    }

    #[test]
    fn duplicate_role_reported_once() {
        let mut m = chain();
        m.joints[1].unified_role = m.joints[0].unified_role;
        let v = validate_model(&m);
        assert_eq!(v, vec![Violation::DuplicateRole("left_hip_pitch".into())]);
    }

    #[test]
    fn nominal_pose_above_limit() {
        let mut m = chain();
        m.nominal_pose[1] = 1.5;
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::OutOfRange(_)));
    }

    #[test]
    fn cycle_and_orphans() {
        let mut m = chain();
        // shin -> thigh closes a loop that no longer reaches the base
        m.joints[0].child = 2;
        m.joints[1].parent = 2;
        m.joints[1].child = 1;
        m.joints[0].parent = 1;
        let v = validate_model(&m);
        assert!(v.iter().any(|x| matches!(x, Violation::CycleDetected(_))), "{v:?}");
    }

    #[test]
    fn bad_physical_values() {
        let mut m = chain();
        m.links[1].mass = -1.0;
        m.joints[0].limits = [0.5, 0.5];
        m.recompute_total_mass();
        let v = validate_model(&m);
        assert_eq!(v.iter().filter(|x| matches!(x, Violation::OutOfRange(_))).count(), 3);
    }

    #[test]
    fn missing_link_index() {
        let mut m = chain();
        m.joints[1].child = 9;
        let v = validate_model(&m);
        assert!(v.contains(&Violation::MissingLink("joint knee child #9".into())));
    }

    #[test]
    fn unmapped_model_is_only_flagged() {
        let mut m = chain();
        for j in &mut m.joints {
            j.unified_role = None;
        }
        let v = validate_model(&m);
        assert_eq!(v, vec![Violation::NoMappedJoints]);
        assert!(!v[0].is_error());
    }

    #[test]
    fn joint_order_parents_first() {
        let m = chain();
        assert_eq!(m.joint_order(), vec![0, 1]);
        assert_eq!(m.leaf_links(), vec![2]);
    }
}
