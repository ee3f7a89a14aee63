//! Sequence matching by label identity and gap consistency.
//!
//! Two complete sequences match when their labels agree position by position
//! and every pair of corresponding gaps differs by at most `epsilon`. Three
//! enumeration strategies produce identical candidate sets:
//!
//! * [`batch_match`] visits all `N(N-1)/2` unordered pairs;
//! * [`incremental_match`] compares newly completed sequences with their
//!   predecessors, so the union over a session equals the batch result;
//! * [`indexed_match`] / [`SignatureIndex`] only compare sequences whose ordered
//!   label tuples are identical.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::database::{DatabaseSnapshot, MarkingSequence};
use crate::error::{Error, Result};
use crate::label::MarkingLabel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Cross-session: pairs must come from different sessions.
    PlaceRecognition,
    /// Within one session: pairs must be separated in frames and travel.
    LoopDetection,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "place" | "place-recognition" => Ok(MatchMode::PlaceRecognition),
            "loop" | "loop-detection" => Ok(MatchMode::LoopDetection),
            other => Err(Error::invalid(format!(
                "unknown mode {other:?} (expected place or loop)"
            ))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::PlaceRecognition => "place",
            MatchMode::LoopDetection => "loop",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub seq_a: u64,
    pub seq_b: u64,
    /// `|gap_a[i] - gap_b[i]|` per gap (m).
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub label_signature: Vec<MarkingLabel>,
}

impl MatchCandidate {
    pub fn pair(&self) -> (u64, u64) {
        (self.seq_a, self.seq_b)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Sorted by `(seq_a, seq_b)`.
    pub candidates: Vec<MatchCandidate>,
    pub comparisons_performed: u64,
    /// Wall-clock seconds spent matching.
    pub query_time: f64,
}

impl MatchReport {
    pub fn pairs(&self) -> BTreeSet<(u64, u64)> {
        self.candidates.iter().map(MatchCandidate::pair).collect()
    }

    /// Candidates ranked by ascending `max_residual`, ties by id pair.
    pub fn ranked(&self) -> Vec<&MatchCandidate> {
        let mut out: Vec<_> = self.candidates.iter().collect();
        out.sort_by(|a, b| {
            a.max_residual
                .total_cmp(&b.max_residual)
                .then(a.pair().cmp(&b.pair()))
        });
        out
    }

    /// Folds another report into this one, keeping the candidate order.
    pub fn absorb(&mut self, other: MatchReport) {
        self.candidates.extend(other.candidates);
        self.candidates.sort_by_key(MatchCandidate::pair);
        self.candidates.dedup_by_key(|c| c.pair());
        self.comparisons_performed += other.comparisons_performed;
        self.query_time += other.query_time;
    }

    fn finish(mut candidates: Vec<MatchCandidate>, comparisons: u64, started: Instant) -> Self {
        candidates.sort_by_key(MatchCandidate::pair);
        Self {
            candidates,
            comparisons_performed: comparisons,
            query_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// Label + gap predicate. Returns `Ok(None)` when the sequences differ.
pub fn sequences_match(
    a: &MarkingSequence,
    b: &MarkingSequence,
    epsilon: f64,
) -> Result<Option<MatchCandidate>> {
    if a.entries.len() != b.entries.len() || a.gaps.len() != b.gaps.len() {
        return Err(Error::invalid(format!(
            "cannot match sequences of length {} and {}",
            a.entries.len(),
            b.entries.len()
        )));
    }
    if a.labels().ne(b.labels()) {
        return Ok(None);
    }
    let mut residuals = Vec::with_capacity(a.gaps.len());
    for (ga, gb) in a.gaps.iter().zip(&b.gaps) {
        let r = (ga - gb).abs();
        if r.is_nan() || r > epsilon {
            return Ok(None);
        }
        residuals.push(r);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let (seq_a, seq_b) = if a.sequence_id <= b.sequence_id {
        (a.sequence_id, b.sequence_id)
    } else {
        (b.sequence_id, a.sequence_id)
    };
    Ok(Some(MatchCandidate {
        seq_a,
        seq_b,
        residuals,
        max_residual,
        label_signature: a.label_signature(),
    }))
}

/// Whether a pair may be reported at all in `mode`.
pub fn admissible_pair(
    a: &MarkingSequence,
    b: &MarkingSequence,
    cfg: &EngineConfig,
    mode: MatchMode,
) -> bool {
    match mode {
        MatchMode::PlaceRecognition => a.session != b.session,
        MatchMode::LoopDetection => {
            if a.session != b.session {
                return false;
            }
            let (early, late) = if a.frame_range.0 <= b.frame_range.0 {
                (a, b)
            } else {
                (b, a)
            };
            if late.frame_range.0 <= early.frame_range.1 {
                return false;
            }
            let frames = late.frame_range.0 - early.frame_range.1;
            let travel = late.arc_range.0 - early.arc_range.1;
            frames >= cfg.min_separation_frames && travel >= cfg.min_separation_distance
        }
    }
}

fn compare(
    a: &MarkingSequence,
    b: &MarkingSequence,
    cfg: &EngineConfig,
    mode: MatchMode,
) -> Option<MatchCandidate> {
    if !admissible_pair(a, b, cfg, mode) {
        return None;
    }
    sequences_match(a, b, cfg.epsilon).ok().flatten()
}

/// Compares every unordered pair of the snapshot.
pub fn batch_match(snap: &DatabaseSnapshot, cfg: &EngineConfig, mode: MatchMode) -> MatchReport {
    let started = Instant::now();
    let seqs = snap.sequences();
    let n = seqs.len() as u64;
    let candidates: Vec<MatchCandidate> = (0..seqs.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &seqs[i];
            seqs[i + 1..]
                .iter()
                .filter_map(move |b| compare(a, b, cfg, mode))
        })
        .collect();
    MatchReport::finish(candidates, n * n.saturating_sub(1) / 2, started)
}

/// Compares each new sequence with every snapshot sequence of smaller id.
pub fn incremental_match(
    snap: &DatabaseSnapshot,
    new_sequences: &[Arc<MarkingSequence>],
    cfg: &EngineConfig,
    mode: MatchMode,
) -> MatchReport {
    let started = Instant::now();
    let seqs = snap.sequences();
    let mut comparisons = 0u64;
    let mut candidates = Vec::new();
    for s in new_sequences {
        let prior = &seqs[..(s.sequence_id as usize).min(seqs.len())];
        comparisons += prior.len() as u64;
        candidates.extend(prior.iter().filter_map(|p| compare(p, s, cfg, mode)));
    }
    MatchReport::finish(candidates, comparisons, started)
}

/// Batch matching restricted to sequences with identical label tuples.
pub fn indexed_match(snap: &DatabaseSnapshot, cfg: &EngineConfig, mode: MatchMode) -> MatchReport {
    let started = Instant::now();
    let index = SignatureIndex::from_snapshot(snap);
    let seqs = snap.sequences();
    let mut comparisons = 0u64;
    let mut candidates = Vec::new();
    for bucket in index.buckets.values() {
        let m = bucket.len() as u64;
        comparisons += m * m.saturating_sub(1) / 2;
        for (i, &a) in bucket.iter().enumerate() {
            for &b in &bucket[i + 1..] {
                if let Some(c) = compare(&seqs[a as usize], &seqs[b as usize], cfg, mode) {
                    candidates.push(c);
                }
            }
        }
    }
    MatchReport::finish(candidates, comparisons, started)
}

/// Buckets of sequence ids keyed by their ordered label tuple.
#[derive(Clone, Debug, Default)]
pub struct SignatureIndex {
    buckets: HashMap<Vec<MarkingLabel>, Vec<u64>>,
}

impl SignatureIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_snapshot(snap: &DatabaseSnapshot) -> Self {
        let mut index = Self::new();
        for s in snap.sequences() {
            index.insert(s);
        }
        index
    }

    /// Ids must be inserted in increasing order.
    pub fn insert(&mut self, seq: &MarkingSequence) {
        self.buckets
            .entry(seq.label_signature())
            .or_default()
            .push(seq.sequence_id);
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// Matches `seq` against indexed sequences of smaller id and the same
    /// signature. `seq` need not be indexed yet.
    pub fn query(
        &self,
        snap: &DatabaseSnapshot,
        seq: &MarkingSequence,
        cfg: &EngineConfig,
        mode: MatchMode,
    ) -> MatchReport {
        let started = Instant::now();
        let seqs = snap.sequences();
        let Some(bucket) = self.buckets.get(&seq.label_signature()) else {
            return MatchReport::finish(Vec::new(), 0, started);
        };
        let prior = &bucket[..bucket.partition_point(|&id| id < seq.sequence_id)];
        let candidates = prior
            .iter()
            .filter_map(|&id| seqs.get(id as usize))
            .filter_map(|p| compare(p, seq, cfg, mode))
            .collect();
        MatchReport::finish(candidates, prior.len() as u64, started)
    }
}

/// Runs the indexed matcher after every database update.
#[derive(Clone, Debug)]
pub struct OnlineMatcher {
    index: SignatureIndex,
    cfg: EngineConfig,
    mode: MatchMode,
}

impl OnlineMatcher {
    pub fn new(cfg: EngineConfig, mode: MatchMode) -> Self {
        Self {
            index: SignatureIndex::new(),
            cfg,
            mode,
        }
    }

    /// Indexes the newly completed sequences and matches each against history.
    pub fn update(
        &mut self,
        snap: &DatabaseSnapshot,
        new_sequences: &[Arc<MarkingSequence>],
    ) -> MatchReport {
        let mut report = MatchReport::default();
        for s in new_sequences {
            report.absorb(self.index.query(snap, s, &self.cfg, self.mode));
            self.index.insert(s);
        }
        report
    }
}
