//! Transform between a robot's physical joint space and the fixed 32-slot
//! unified space.
//!
//! Positions use `q_env = M (s * (q_phys - b))` and the inverse
//! `q_phys = s * (M^T q_env) + b`. Velocities and torques drop the offset.
//! `M` is stored as an index map, never as a dense matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot_model::{ModelError, RobotModel};
use crate::roster::{LEG_SLOTS, LEG_WAIST_SLOTS, NUM_SLOTS, ROSTER};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dimension mismatch: expected {expected}, got {got}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub got: usize,
}

fn check_len(expected: usize, got: usize) -> Result<(), DimensionMismatch> {
    if expected == got {
        Ok(())
    } else {
        Err(DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointMapping {
    /// Physical joint index per unified slot.
    pub slot_to_phys: [Option<usize>; NUM_SLOTS],
    /// Unified slot per physical joint.
    pub phys_to_slot: Vec<Option<usize>>,
    /// Per physical joint axis sign.
    pub sign: Vec<f64>,
    /// Per physical joint neutral offset.
    pub offset: Vec<f64>,
}

/// Builds the index map from the model's role tags.
pub fn build_mapping(m: &RobotModel) -> Result<JointMapping, ModelError> {
    let mut slot_to_phys = [None; NUM_SLOTS];
    let mut phys_to_slot = Vec::with_capacity(m.joints.len());
    for (i, j) in m.joints.iter().enumerate() {
        if let Some(slot) = j.unified_role {
            if slot >= NUM_SLOTS {
                return Err(ModelError::OutOfRange(format!("role slot {slot}")));
            }
            if slot_to_phys[slot].is_some() {
                return Err(ModelError::DuplicateRole(ROSTER[slot].to_string()));
            }
            slot_to_phys[slot] = Some(i);
        }
        phys_to_slot.push(j.unified_role);
    }
    Ok(JointMapping {
        slot_to_phys,
        phys_to_slot,
        sign: m.joints.iter().map(|j| j.sign).collect(),
        offset: m.joints.iter().map(|j| j.offset).collect(),
    })
}

impl JointMapping {
    pub fn n_phys(&self) -> usize {
        self.phys_to_slot.len()
    }

    pub fn n_mapped(&self) -> usize {
        self.slot_to_phys.iter().filter(|s| s.is_some()).count()
    }

    /// Per-slot sign, `+1` on unmapped slots.
    pub fn slot_sign(&self, slot: usize) -> f64 {
        self.slot_to_phys[slot].map_or(1.0, |p| self.sign[p])
    }

    /// Per-slot offset, `0` on unmapped slots.
    pub fn slot_offset(&self, slot: usize) -> f64 {
        self.slot_to_phys[slot].map_or(0.0, |p| self.offset[p])
    }

    pub fn phys_to_env<T: Scalar>(&self, q_phys: &[T]) -> Result<[T; NUM_SLOTS], DimensionMismatch> {
        check_len(self.n_phys(), q_phys.len())?;
        let mut out = [T::zero(); NUM_SLOTS];
        self.phys_to_env_into(q_phys, &mut out, true);
        Ok(out)
    }

    /// Velocity (and torque) variant: `M (s * qdot)`.
    pub fn phys_to_env_rate<T: Scalar>(&self, qd_phys: &[T]) -> Result<[T; NUM_SLOTS], DimensionMismatch> {
        check_len(self.n_phys(), qd_phys.len())?;
        let mut out = [T::zero(); NUM_SLOTS];
        self.phys_to_env_into(qd_phys, &mut out, false);
        Ok(out)
    }

    /// Unchecked core of the forward transform. `out` must have 32 entries.
    pub fn phys_to_env_into<T: Scalar>(&self, q_phys: &[T], out: &mut [T], with_offset: bool) {
        for (slot, dst) in out.iter_mut().enumerate().take(NUM_SLOTS) {
            *dst = match self.slot_to_phys[slot] {
                Some(p) => {
                    let b = if with_offset { T::lit(self.offset[p]) } else { T::zero() };
                    T::lit(self.sign[p]) * (q_phys[p] - b)
                }
                None => T::zero(),
            };
        }
    }

    pub fn env_to_phys<T: Scalar>(&self, q_env: &[T]) -> Result<Vec<T>, DimensionMismatch> {
        check_len(NUM_SLOTS, q_env.len())?;
        let mut out = vec![T::zero(); self.n_phys()];
        self.env_to_phys_into(q_env, &mut out, true);
        Ok(out)
    }

    pub fn env_to_phys_rate<T: Scalar>(&self, qd_env: &[T]) -> Result<Vec<T>, DimensionMismatch> {
        check_len(NUM_SLOTS, qd_env.len())?;
        let mut out = vec![T::zero(); self.n_phys()];
        self.env_to_phys_into(qd_env, &mut out, false);
        Ok(out)
    }

    /// Unchecked core of the inverse transform.
    pub fn env_to_phys_into<T: Scalar>(&self, q_env: &[T], out: &mut [T], with_offset: bool) {
        for (p, dst) in out.iter_mut().enumerate() {
            let v = match self.phys_to_slot[p] {
                Some(slot) => T::lit(self.sign[p]) * q_env[slot],
                None => T::zero(),
            };
            *dst = if with_offset { v + T::lit(self.offset[p]) } else { v };
        }
    }
}

/// Which unified slots the policy may drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    bits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskPreset {
    #[default]
    Legs12,
    LegsWaist15,
    Whole32,
}

impl ActionMask {
    pub fn preset(p: MaskPreset) -> Self {
        match p {
            MaskPreset::Legs12 => Self::first(LEG_SLOTS),
            MaskPreset::LegsWaist15 => Self::first(LEG_WAIST_SLOTS),
            MaskPreset::Whole32 => Self::first(NUM_SLOTS),
        }
    }

    pub fn legs12() -> Self {
        Self::preset(MaskPreset::Legs12)
    }

    pub fn legs_waist15() -> Self {
        Self::preset(MaskPreset::LegsWaist15)
    }

    pub fn whole32() -> Self {
        Self::preset(MaskPreset::Whole32)
    }

    fn first(n: usize) -> Self {
        let bits = if n >= 32 { u32::MAX } else { (1u32 << n) - 1 };
        ActionMask { bits }
    }

    pub fn from_slots(slots: &[usize]) -> Self {
        ActionMask {
            bits: slots.iter().fold(0, |b, &s| b | (1 << s)),
        }
    }

    #[inline]
    pub fn contains(&self, slot: usize) -> bool {
        slot < NUM_SLOTS && self.bits & (1 << slot) != 0
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_SLOTS).filter(|&s| self.contains(s))
    }

    /// Zeroes every slot outside the mask in place.
    pub fn apply<T: Scalar>(&self, a_env: &mut [T]) {
        for (slot, a) in a_env.iter_mut().enumerate().take(NUM_SLOTS) {
            if !self.contains(slot) {
                *a = T::zero();
            }
        }
    }
}

/// Copying form of [`ActionMask::apply`].
pub fn apply_mask<T: Scalar>(mask: &ActionMask, a_env: &[T; NUM_SLOTS]) -> [T; NUM_SLOTS] {
    let mut out = *a_env;
    mask.apply(&mut out);
    out
}
