use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MarkingLabel;

/// Frozen copy of a marking instance as it entered a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub instance_id: u64,
    pub label: MarkingLabel,
    pub position: Vector3<f64>,
    pub first_frame: u64,
    pub last_frame: u64,
}

/// A complete window of `k` consecutive markings on one track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkingSequence {
    pub sequence_id: u64,
    pub session: u32,
    pub track_id: u64,
    pub entries: Vec<SequenceEntry>,
    /// `gaps[i]` is the distance between entries `i` and `i + 1`.
    pub gaps: Vec<f64>,
    /// (min first_frame, max last_frame) over the entries.
    pub frame_range: (u64, u64),
    /// Trajectory arc length (m) at the two ends of `frame_range`.
    pub arc_range: (f64, f64),
}

impl MarkingSequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &MarkingLabel> {
        self.entries.iter().map(|e| &e.label)
    }

    pub fn label_signature(&self) -> Vec<MarkingLabel> {
        self.labels().cloned().collect()
    }

    pub fn instance_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.instance_id)
    }
}

pub(crate) fn gaps_of(entries: &[SequenceEntry]) -> Vec<f64> {
    entries
        .windows(2)
        .map(|w| (w[1].position - w[0].position).norm())
        .collect()
}

/// Distances between consecutive entries of a sequence.
pub fn sequence_gaps(seq: &MarkingSequence) -> Result<Vec<f64>> {
    if seq.entries.len() < 2 {
        return Err(Error::invalid(format!(
            "sequence {} has {} entries; gaps need at least 2",
            seq.sequence_id,
            seq.entries.len()
        )));
    }
    Ok(gaps_of(&seq.entries))
}

#[cfg(test)]
pub(crate) fn test_sequence(id: u64, labels: &[&str], positions: &[[f64; 3]]) -> MarkingSequence {
    let entries: Vec<SequenceEntry> = labels
        .iter()
        .zip(positions)
        .enumerate()
        .map(|(i, (l, p))| SequenceEntry {
            instance_id: id * 100 + i as u64,
            label: MarkingLabel::new(l).unwrap(),
            position: Vector3::from(*p),
            first_frame: id * 1000 + i as u64,
            last_frame: id * 1000 + i as u64,
        })
        .collect();
    let gaps = gaps_of(&entries);
    MarkingSequence {
        sequence_id: id,
        session: 0,
        track_id: 0,
        frame_range: (entries[0].first_frame, entries.last().unwrap().last_frame),
        arc_range: (0.0, 0.0),
        entries,
        gaps,
    }
}
