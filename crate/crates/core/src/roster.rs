//! The fixed 32-slot joint roster shared by every embodiment.

/// Bumped whenever names or order change; recorded in checkpoints.
pub const ROSTER_VERSION: u32 = 1;

pub const NUM_SLOTS: usize = 32;

/// Slot names in canonical order: legs (12), waist (3), arms (14), neck (3).
pub const ROSTER: [&str; NUM_SLOTS] = [
    "left_hip_yaw",
    "left_hip_roll",
    "left_hip_pitch",
    "left_knee_pitch",
    "left_ankle_pitch",
    "left_ankle_roll",
    "right_hip_yaw",
    "right_hip_roll",
    "right_hip_pitch",
    "right_knee_pitch",
    "right_ankle_pitch",
    "right_ankle_roll",
    "waist_yaw",
    "waist_roll",
    "waist_pitch",
    "left_shoulder_pitch",
    "left_shoulder_roll",
    "left_shoulder_yaw",
    "left_elbow_pitch",
    "left_wrist_yaw",
    "left_wrist_roll",
    "left_wrist_pitch",
    "right_shoulder_pitch",
    "right_shoulder_roll",
    "right_shoulder_yaw",
    "right_elbow_pitch",
    "right_wrist_yaw",
    "right_wrist_roll",
    "right_wrist_pitch",
    "neck_yaw",
    "neck_pitch",
    "neck_roll",
];

/// Role tag for joints that do not enter the unified space.
pub const UNMAPPED: &str = "unmapped";

/// Number of leading slots covered by the leg-only action set.
pub const LEG_SLOTS: usize = 12;
/// Number of leading slots covered by the legs + waist action set.
pub const LEG_WAIST_SLOTS: usize = 15;

/// Index of a roster name, `None` for unknown names.
pub fn slot_index(name: &str) -> Option<usize> {
    ROSTER.iter().position(|r| *r == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn roster_is_unique_and_complete() {
        let set: HashSet<_> = ROSTER.iter().collect();
        assert_eq!(set.len(), NUM_SLOTS);
        assert!(!set.contains(&UNMAPPED));
    }

    #[test]
    fn block_boundaries() {
        assert!(ROSTER[..LEG_SLOTS].iter().all(|n| n.contains("hip")
            || n.contains("knee")
            || n.contains("ankle")));
        assert!(ROSTER[LEG_SLOTS..LEG_WAIST_SLOTS].iter().all(|n| n.starts_with("waist")));
        assert!(ROSTER[29..].iter().all(|n| n.starts_with("neck")));
        assert_eq!(slot_index("left_knee_pitch"), Some(3));
        assert_eq!(slot_index("tail"), None);
    }
}
