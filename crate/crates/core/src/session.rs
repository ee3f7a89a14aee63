//! One recorded drive: per-frame camera poses plus the detections made in it.

use std::sync::Arc;

use crate::config::CameraRig;
use crate::database::{MarkingSequence, SequenceDatabase};
use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Detection, Observation3D};

#[derive(Clone, Debug, PartialEq)]
pub struct PoseRecord {
    pub frame: u64,
    pub timestamp: f64,
    pub pose: CameraPose,
}

/// Detections either as image centroids or as ground points that skip
/// localization.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionDetections {
    Pixel(Vec<Detection>),
    Ground(Vec<Observation3D>),
}

impl SessionDetections {
    pub fn len(&self) -> usize {
        match self {
            SessionDetections::Pixel(d) => d.len(),
            SessionDetections::Ground(o) => o.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame_of(&self, idx: usize) -> u64 {
        match self {
            SessionDetections::Pixel(d) => d[idx].frame_id,
            SessionDetections::Ground(o) => o[idx].frame_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionLog {
    /// One pose per frame, frames strictly increasing.
    pub poses: Vec<PoseRecord>,
    /// Sorted by frame.
    pub detections: SessionDetections,
    /// Needed to localize [`SessionDetections::Pixel`] detections.
    pub rig: Option<CameraRig>,
}

impl SessionLog {
    pub fn validate(&self) -> Result<()> {
        for w in self.poses.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(Error::invalid(format!(
                    "pose frames not strictly increasing: {} then {}",
                    w[0].frame, w[1].frame
                )));
            }
        }
        for i in 1..self.detections.len() {
            if self.detections.frame_of(i) < self.detections.frame_of(i - 1) {
                return Err(Error::invalid(format!(
                    "detections not sorted by frame at record {}",
                    i + 1
                )));
            }
        }
        if matches!(self.detections, SessionDetections::Pixel(ref d) if !d.is_empty())
            && self.rig.is_none()
        {
            return Err(Error::invalid(
                "pixel detections need camera intrinsics in the config",
            ));
        }
        Ok(())
    }

    /// Feeds the whole session into `db` frame by frame and closes the
    /// session. `on_update` sees every non-empty batch of completed sequences,
    /// including the final flush.
    pub fn replay<F>(&self, db: &mut SequenceDatabase, mut on_update: F) -> Result<()>
    where
        F: FnMut(&mut SequenceDatabase, &[Arc<MarkingSequence>]),
    {
        self.validate()?;
        let mut cursor = 0usize;
        let total = self.detections.len();
        for rec in &self.poses {
            if cursor < total && self.detections.frame_of(cursor) < rec.frame {
                return Err(Error::invalid(format!(
                    "detection for frame {} has no pose",
                    self.detections.frame_of(cursor)
                )));
            }
            let start = cursor;
            while cursor < total && self.detections.frame_of(cursor) == rec.frame {
                cursor += 1;
            }
            let done = match &self.detections {
                SessionDetections::Pixel(d) => {
                    let rig = self.rig.as_ref().expect("validated");
                    db.ingest_frame(rec.frame, &rec.pose, &d[start..cursor], rig)?
                }
                SessionDetections::Ground(o) => {
                    db.ingest_observations(rec.frame, rec.pose.position, &o[start..cursor])?
                }
            };
            if !done.is_empty() {
                on_update(db, &done);
            }
        }
        if cursor < total {
            return Err(Error::invalid(format!(
                "detection for frame {} has no pose",
                self.detections.frame_of(cursor)
            )));
        }
        let done = db.finish_session();
        if !done.is_empty() {
            on_update(db, &done);
        }
        Ok(())
    }
}
