use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Observation3D;
use crate::label::MarkingLabel;

/// Lifecycle of an instance inside the database.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceState {
    /// Still absorbing observations.
    Open,
    /// Out of the merge window, waiting for earlier instances to settle.
    Closed,
    /// Placed on a track and appended to its sequences.
    Accepted,
    /// Closed with too few observations.
    Discarded,
}

/// One physical road marking, deduplicated over the frames that observed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkingInstance {
    pub instance_id: u64,
    pub session: u32,
    pub label: MarkingLabel,
    /// Running mean of the merged observation positions.
    pub position: Vector3<f64>,
    pub first_frame: u64,
    pub last_frame: u64,
    /// Set once the instance is accepted onto a track.
    pub track_id: Option<u64>,
    pub obs_count: u32,
    pub state: InstanceState,
}

impl MarkingInstance {
    pub(crate) fn from_observation(instance_id: u64, session: u32, obs: &Observation3D) -> Self {
        Self {
            instance_id,
            session,
            label: obs.label.clone(),
            position: obs.position,
            first_frame: obs.frame_id,
            last_frame: obs.frame_id,
            track_id: None,
            obs_count: 1,
            state: InstanceState::Open,
        }
    }

    pub(crate) fn absorb(&mut self, obs: &Observation3D) {
        self.obs_count += 1;
        self.position += (obs.position - self.position) / self.obs_count as f64;
        self.last_frame = self.last_frame.max(obs.frame_id);
    }

    /// Whether an observation made in `frame` may still merge into this instance.
    pub(crate) fn accepts_frame(&self, frame: u64, merge_window: u64) -> bool {
        self.state == InstanceState::Open && frame.saturating_sub(self.last_frame) <= merge_window
    }
}

/// Picks the instance an observation merges into: same label, within
/// `radius`, nearest first, then smallest id.
pub(crate) fn merge_target<'a>(
    candidates: impl Iterator<Item = &'a MarkingInstance>,
    obs: &Observation3D,
    radius: f64,
    merge_window: u64,
) -> Option<u64> {
    let mut best: Option<(f64, u64)> = None;
    for inst in candidates {
        if inst.label != obs.label || !inst.accepts_frame(obs.frame_id, merge_window) {
            continue;
        }
        let d = (inst.position - obs.position).norm();
        if d > radius {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && inst.instance_id < bid),
        };
        if better {
            best = Some((d, inst.instance_id));
        }
    }
    best.map(|(_, id)| id)
}
