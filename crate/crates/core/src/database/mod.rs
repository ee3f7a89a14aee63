//! Online database of road-marking sequences.
//!
//! Observations are merged into [`MarkingInstance`]s. An instance stays open
//! while it keeps being observed; once it has gone `merge_window_frames`
//! without an observation it closes, and closed instances settle strictly in
//! creation order. Settling either discards the instance (fewer than
//! `min_observations`) or accepts it onto a lane track: it is appended to every
//! incomplete sequence of that track and spawns a new singleton sequence.
//! Sequences that reach `k` entries are frozen into the append-only complete
//! list, so each track yields every window of `k` consecutive markings.
//!
//! Two instances first seen in the same frame never share a sequence: if track
//! assignment would put them on one track, the later one starts a new track.

mod instance;
mod sequence;
mod snapshot;

use std::collections::VecDeque;
use std::sync::Arc;

use log::warn;
use nalgebra::Vector3;
use serde::Serialize;

use crate::config::{CameraRig, EngineConfig};
use crate::error::{Error, Result};
use crate::geometry::{localize_detection, CameraPose, Detection, Observation3D};

pub use instance::{InstanceState, MarkingInstance};
pub(crate) use sequence::gaps_of;
pub use sequence::{sequence_gaps, MarkingSequence, SequenceEntry};
pub use snapshot::DatabaseSnapshot;

#[cfg(test)]
pub(crate) use sequence::test_sequence;

/// Counters accumulated over all ingested frames.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub frames: u64,
    pub detections: u64,
    /// Detections whose ray missed the ground plane.
    pub dropped_no_intersection: u64,
    pub observations: u64,
    pub instances_created: u64,
    pub instances_accepted: u64,
    pub instances_discarded: u64,
    pub tracks: u64,
}

#[derive(Clone, Debug)]
struct Track {
    id: u64,
    last_instance: usize,
    /// Instance indices of each growing window, oldest window first.
    incomplete: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
struct Session {
    id: u32,
    last_frame: Option<u64>,
    /// Instance indices still accepting observations.
    open: Vec<usize>,
    /// Instances not yet settled, in creation order.
    pending: VecDeque<usize>,
    last_position: Option<Vector3<f64>>,
    heading: Option<Vector3<f64>>,
    /// (frame, cumulative camera travel) for every ingested frame.
    arc: Vec<(u64, f64)>,
    tracks: Vec<Track>,
}

impl Session {
    fn new(id: u32) -> Self {
        Self {
            id,
            last_frame: None,
            open: Vec::new(),
            pending: VecDeque::new(),
            last_position: None,
            heading: None,
            arc: Vec::new(),
            tracks: Vec::new(),
        }
    }
}

/// Cumulative travel at the last recorded frame not after `frame`.
fn arc_at(arc: &[(u64, f64)], frame: u64) -> f64 {
    let idx = arc.partition_point(|&(f, _)| f <= frame);
    if idx == 0 {
        0.0
    } else {
        arc[idx - 1].1
    }
}

/// Single-writer sequence database. Share [`DatabaseSnapshot`]s with readers.
#[derive(Clone, Debug)]
pub struct SequenceDatabase {
    config: EngineConfig,
    instances: Vec<MarkingInstance>,
    complete: Arc<Vec<Arc<MarkingSequence>>>,
    session: Option<Session>,
    next_session: u32,
    next_track: u64,
    snapshots_taken: u64,
    stats: IngestStats,
}

impl SequenceDatabase {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            instances: Vec::new(),
            complete: Arc::new(Vec::new()),
            session: None,
            next_session: 0,
            next_track: 0,
            snapshots_taken: 0,
            stats: IngestStats::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn instances(&self) -> &[MarkingInstance] {
        &self.instances
    }

    pub fn complete(&self) -> &[Arc<MarkingSequence>] {
        &self.complete
    }

    /// Number of incomplete sequences per track of the active session.
    pub fn incomplete_counts(&self) -> Vec<(u64, usize)> {
        self.session
            .iter()
            .flat_map(|s| s.tracks.iter().map(|t| (t.id, t.incomplete.len())))
            .collect()
    }

    pub fn current_session(&self) -> Option<u32> {
        self.session.as_ref().map(|s| s.id)
    }

    /// Immutable view of the complete sequences; versions increase with every call.
    pub fn snapshot(&mut self) -> DatabaseSnapshot {
        self.snapshots_taken += 1;
        DatabaseSnapshot::new(
            self.snapshots_taken,
            self.config.clone(),
            Arc::clone(&self.complete),
        )
    }

    /// Localizes pixel detections with `rig` and ingests them.
    ///
    /// Detections whose ray misses the ground are dropped and counted in
    /// [`IngestStats::dropped_no_intersection`].
    pub fn ingest_frame(
        &mut self,
        frame_id: u64,
        pose: &CameraPose,
        detections: &[Detection],
        rig: &CameraRig,
    ) -> Result<Vec<Arc<MarkingSequence>>> {
        let mut observations = Vec::with_capacity(detections.len());
        for det in detections {
            if det.frame_id != frame_id {
                return Err(Error::invalid(format!(
                    "detection for frame {} passed with frame {frame_id}",
                    det.frame_id
                )));
            }
            match localize_detection(det, pose, &rig.intrinsics, &rig.plane) {
                Ok(obs) => observations.push(obs),
                Err(Error::NoIntersection) => {
                    self.stats.dropped_no_intersection += 1;
                    warn!(
                        "frame {frame_id}: {} detection at ({:.1}, {:.1}) does not hit the ground; dropped",
                        det.label, det.centroid.0, det.centroid.1
                    );
                }
                Err(e) => return Err(e),
            }
        }
        self.stats.detections += detections.len() as u64;
        self.ingest_observations(frame_id, pose.position, &observations)
    }

    /// Ingests already-localized observations for one frame. Frames with no
    /// observations should still be passed so travel distance and instance
    /// closing stay current.
    pub fn ingest_observations(
        &mut self,
        frame_id: u64,
        camera_position: Vector3<f64>,
        observations: &[Observation3D],
    ) -> Result<Vec<Arc<MarkingSequence>>> {
        if let Some(obs) = observations.iter().find(|o| o.frame_id != frame_id) {
            return Err(Error::invalid(format!(
                "observation for frame {} passed with frame {frame_id}",
                obs.frame_id
            )));
        }
        if let Some(prev) = self.session.as_ref().and_then(|s| s.last_frame) {
            if frame_id < prev {
                return Err(Error::invalid(format!(
                    "frame {frame_id} arrived after frame {prev}"
                )));
            }
        }
        if self.session.is_none() {
            self.session = Some(Session::new(self.next_session));
            self.next_session += 1;
        }
        let session = self.session.as_mut().expect("session started above");
        session.last_frame = Some(frame_id);

        let travelled = match session.last_position {
            Some(prev) => {
                let step = camera_position - prev;
                let len = step.norm();
                if len > 0.0 {
                    session.heading = Some(step / len);
                }
                len
            }
            None => 0.0,
        };
        let total = session.arc.last().map_or(0.0, |&(_, a)| a) + travelled;
        session.arc.push((frame_id, total));
        session.last_position = Some(camera_position);
        self.stats.frames += 1;

        for obs in observations {
            self.merge_observation(obs);
        }

        let window = self.config.merge_window_frames;
        let session = self.session.as_mut().expect("active session");
        let instances = &mut self.instances;
        session.open.retain(|&idx| {
            let inst = &mut instances[idx];
            if frame_id.saturating_sub(inst.last_frame) >= window {
                inst.state = InstanceState::Closed;
                false
            } else {
                true
            }
        });

        Ok(self.settle())
    }

    /// Closes every open instance of the active session, settles them and
    /// ends the session. The next ingest starts a new session id.
    pub fn finish_session(&mut self) -> Vec<Arc<MarkingSequence>> {
        let Some(session) = self.session.as_mut() else {
            return Vec::new();
        };
        for idx in session.open.drain(..) {
            self.instances[idx].state = InstanceState::Closed;
        }
        let done = self.settle();
        self.session = None;
        done
    }

    /// Merges `obs` into a matching open instance or creates a new one.
    /// Returns the instance index and whether it is new.
    fn merge_observation(&mut self, obs: &Observation3D) -> (usize, bool) {
        self.stats.observations += 1;
        let session = self.session.as_mut().expect("active session");
        let target = instance::merge_target(
            session.open.iter().map(|&i| &self.instances[i]),
            obs,
            self.config.merge_radius,
            self.config.merge_window_frames,
        );
        if let Some(id) = target {
            let idx = id as usize;
            self.instances[idx].absorb(obs);
            return (idx, false);
        }
        let idx = self.instances.len();
        self.instances.push(MarkingInstance::from_observation(
            idx as u64, session.id, obs,
        ));
        session.open.push(idx);
        session.pending.push_back(idx);
        self.stats.instances_created += 1;
        (idx, true)
    }

    fn settle(&mut self) -> Vec<Arc<MarkingSequence>> {
        let mut completed = Vec::new();
        loop {
            let session = self.session.as_mut().expect("active session");
            let Some(&idx) = session.pending.front() else {
                break;
            };
            if self.instances[idx].state != InstanceState::Closed {
                break;
            }
            session.pending.pop_front();
            if self.instances[idx].obs_count < self.config.min_observations {
                self.instances[idx].state = InstanceState::Discarded;
                self.stats.instances_discarded += 1;
                continue;
            }
            let track = self.assign_track(idx);
            self.append_to_track(track, idx, &mut completed);
        }
        completed
    }

    /// Chooses the track for an accepted instance, creating one if needed.
    /// Returns the index into the session's track list.
    fn assign_track(&mut self, idx: usize) -> usize {
        let session = self.session.as_mut().expect("active session");
        let inst = &self.instances[idx];
        let mut best: Option<(f64, u64, usize)> = None;
        for (t_idx, track) in session.tracks.iter().enumerate() {
            let last = &self.instances[track.last_instance];
            let lateral = lateral_distance(inst.position - last.position, session.heading);
            if lateral > self.config.lane_width {
                continue;
            }
            let better = match best {
                None => true,
                Some((bl, bid, _)) => lateral < bl || (lateral == bl && track.id < bid),
            };
            if better {
                best = Some((lateral, track.id, t_idx));
            }
        }

        let chosen = best.map(|(_, _, t)| t).filter(|&t| {
            let last = &self.instances[session.tracks[t].last_instance];
            last.first_frame != inst.first_frame
        });
        let t_idx = match chosen {
            Some(t) => t,
            None => {
                session.tracks.push(Track {
                    id: self.next_track,
                    last_instance: idx,
                    incomplete: Vec::new(),
                });
                self.next_track += 1;
                self.stats.tracks += 1;
                session.tracks.len() - 1
            }
        };
        let track = &mut session.tracks[t_idx];
        track.last_instance = idx;
        let inst = &mut self.instances[idx];
        inst.track_id = Some(track.id);
        inst.state = InstanceState::Accepted;
        self.stats.instances_accepted += 1;
        t_idx
    }

    fn append_to_track(
        &mut self,
        t_idx: usize,
        idx: usize,
        completed: &mut Vec<Arc<MarkingSequence>>,
    ) {
        let k = self.config.k;
        let session = self.session.as_mut().expect("active session");
        let track = &mut session.tracks[t_idx];
        let mut still_growing = Vec::with_capacity(k);
        for mut window in track.incomplete.drain(..) {
            window.push(idx);
            if window.len() == k {
                let store = Arc::make_mut(&mut self.complete);
                let seq = Arc::new(freeze(
                    store.len() as u64,
                    session.id,
                    track.id,
                    &window,
                    &self.instances,
                    &session.arc,
                ));
                store.push(Arc::clone(&seq));
                completed.push(seq);
            } else {
                still_growing.push(window);
            }
        }
        still_growing.push(vec![idx]);
        track.incomplete = still_growing;
    }
}

fn freeze(
    sequence_id: u64,
    session_id: u32,
    track_id: u64,
    window: &[usize],
    instances: &[MarkingInstance],
    arc: &[(u64, f64)],
) -> MarkingSequence {
    let entries: Vec<SequenceEntry> = window
        .iter()
        .map(|&i| {
            let inst = &instances[i];
            SequenceEntry {
                instance_id: inst.instance_id,
                label: inst.label.clone(),
                position: inst.position,
                first_frame: inst.first_frame,
                last_frame: inst.last_frame,
            }
        })
        .collect();
    let first = entries.iter().map(|e| e.first_frame).min().unwrap_or(0);
    let last = entries.iter().map(|e| e.last_frame).max().unwrap_or(0);
    let gaps = sequence::gaps_of(&entries);
    MarkingSequence {
        sequence_id,
        session: session_id,
        track_id,
        entries,
        gaps,
        frame_range: (first, last),
        arc_range: (arc_at(arc, first), arc_at(arc, last)),
    }
}

/// Distance of `offset` from the travel line through the origin. Without a
/// heading estimate the full distance is used.
fn lateral_distance(offset: Vector3<f64>, heading: Option<Vector3<f64>>) -> f64 {
    match heading {
        Some(h) => (offset - h * offset.dot(&h)).norm(),
        None => offset.norm(),
    }
}
