//! k-sweeps, candidate scoring and query-latency benchmarks.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::database::{DatabaseSnapshot, MarkingSequence, SequenceDatabase, SequenceEntry};
use crate::error::{Error, Result};
use crate::label::MarkingLabel;
use crate::matcher::{
    admissible_pair, incremental_match, indexed_match, MatchMode, SignatureIndex,
};
use crate::session::SessionLog;
use crate::simulator::{default_alphabet, ground_truth_pairs, World};

/// Header of the sweep table.
pub const SWEEP_HEADER: &str = "k,num_candidates,pct_correct,pct_incorrect";
/// Header of the latency table.
pub const LATENCY_HEADER: &str = "n,path,mean_s,median_s,p99_s,comparisons,update_mean_s";

/// Candidate counts and percentages; percentages are `None` without candidates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub num_candidates: usize,
    pub num_correct: usize,
    pub pct_correct: Option<f64>,
    pub pct_incorrect: Option<f64>,
}

/// Scores a candidate pair list against the truth set. Duplicate pairs count once.
pub fn score_candidates<I>(candidates: I, truth: &BTreeSet<(u64, u64)>) -> Score
where
    I: IntoIterator<Item = (u64, u64)>,
{
    let unique: BTreeSet<(u64, u64)> = candidates
        .into_iter()
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    let num = unique.len();
    let correct = unique.iter().filter(|p| truth.contains(p)).count();
    let (pct_correct, pct_incorrect) = if num == 0 {
        (None, None)
    } else {
        let c = 100.0 * correct as f64 / num as f64;
        (Some(c), Some(100.0 * (num - correct) as f64 / num as f64))
    };
    Score {
        num_candidates: num,
        num_correct: correct,
        pct_correct,
        pct_incorrect,
    }
}

/// Ground-truth pairs of a simulated world that `mode` allows to be reported.
pub fn admissible_truth(
    world: &World,
    snap: &DatabaseSnapshot,
    cfg: &EngineConfig,
    mode: MatchMode,
) -> BTreeSet<(u64, u64)> {
    let seqs = snap.sequences();
    ground_truth_pairs(world, snap)
        .into_iter()
        .filter(|&(a, b)| admissible_pair(&seqs[a as usize], &seqs[b as usize], cfg, mode))
        .collect()
}

/// One row of the sweep table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub num_candidates: usize,
    /// Percentages with one decimal; `None` when there are no candidates.
    pub pct_correct: Option<f64>,
    pub pct_incorrect: Option<f64>,
    /// Admissible ground-truth pairs; not part of the CSV.
    #[serde(skip)]
    pub num_truth: usize,
    #[serde(skip)]
    pub num_correct: usize,
}

impl SweepRow {
    pub fn from_score(k: usize, score: &Score, num_truth: usize) -> Self {
        Self {
            k,
            num_candidates: score.num_candidates,
            pct_correct: score.pct_correct.map(round1),
            pct_incorrect: score.pct_incorrect.map(round1),
            num_truth,
            num_correct: score.num_correct,
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn fmt_pct(p: Option<f64>) -> String {
    match p {
        Some(v) => format!("{v:.1}"),
        None => "NA".to_string(),
    }
}

impl fmt::Display for SweepRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.k,
            self.num_candidates,
            fmt_pct(self.pct_correct),
            fmt_pct(self.pct_incorrect)
        )
    }
}

impl FromStr for SweepRow {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [k, num, pc, pi] = fields.as_slice() else {
            return Err(Error::invalid(format!(
                "sweep row needs 4 fields: {line:?}"
            )));
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad integer {s:?}: {e}")))
        };
        let pct = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|e| Error::invalid(format!("bad percentage {s:?}: {e}")))?;
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::invalid(format!("percentage {v} out of range")));
            }
            Ok(Some(v))
        };
        Ok(Self {
            k: int(k)?,
            num_candidates: int(num)?,
            pct_correct: pct(pc)?,
            pct_incorrect: pct(pi)?,
            num_truth: 0,
            num_correct: 0,
        })
    }
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_HEADER => {}
        other => {
            return Err(Error::invalid(format!(
                "expected header {SWEEP_HEADER:?}, found {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Replays all sessions into a fresh database with window size `cfg.k`.
pub fn build_database(sessions: &[SessionLog], cfg: &EngineConfig) -> Result<SequenceDatabase> {
    let mut db = SequenceDatabase::new(cfg.clone())?;
    for s in sessions {
        s.replay(&mut db, |_, _| {})?;
    }
    Ok(db)
}

/// Rebuilds the database for every `k`, matches it and scores the candidates
/// against the simulator's truth. Rows come back in the order of `ks`.
pub fn sweep_k(
    world: &World,
    sessions: &[SessionLog],
    ks: &[usize],
    cfg: &EngineConfig,
    mode: MatchMode,
) -> Result<Vec<SweepRow>> {
    if let Some(&k) = ks.iter().find(|&&k| k < 2) {
        return Err(Error::invalid(format!(
            "window size k must be >= 2, got {k}"
        )));
    }
    ks.par_iter()
        .map(|&k| {
            let cfg = cfg.with_k(k);
            let mut db = build_database(sessions, &cfg)?;
            let snap = db.snapshot();
            let report = indexed_match(&snap, &cfg, mode);
            let truth = admissible_truth(world, &snap, &cfg, mode);
            let score = score_candidates(report.candidates.iter().map(|c| c.pair()), &truth);
            log::info!(
                "k={k}: {} sequences, {} candidates, {} correct, {} truth pairs",
                snap.len(),
                score.num_candidates,
                score.num_correct,
                truth.len()
            );
            Ok(SweepRow::from_score(k, &score, truth.len()))
        })
        .collect()
}

/// Parses `a:b` (inclusive) or a single value.
pub fn parse_k_range(text: &str) -> Result<Vec<usize>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| Error::invalid(format!("bad k {s:?}: {e}")))
    };
    let ks: Vec<usize> = match text.split_once(':') {
        Some((a, b)) => {
            let (a, b) = (parse(a)?, parse(b)?);
            if a > b {
                return Err(Error::invalid(format!("empty k range {text:?}")));
            }
            (a..=b).collect()
        }
        None => vec![parse(text)?],
    };
    if ks[0] < 2 {
        return Err(Error::invalid(format!(
            "window size k must be >= 2, got {}",
            ks[0]
        )));
    }
    Ok(ks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPath {
    Indexed,
    BruteForce,
}

impl fmt::Display for QueryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryPath::Indexed => "indexed",
            QueryPath::BruteForce => "brute_force",
        })
    }
}

/// Inquiry latency for one database size and matching path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub db_size: usize,
    pub path: QueryPath,
    pub mean_s: f64,
    pub median_s: f64,
    pub p99_s: f64,
    /// Mean comparisons per inquiry, rounded.
    pub comparisons: u64,
    /// Mean time to register one new sequence with the path's lookup structure.
    pub update_mean_s: f64,
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{:.9},{:.9},{:.9},{},{:.9}",
            self.db_size,
            self.path,
            self.mean_s,
            self.median_s,
            self.p99_s,
            self.comparisons,
            self.update_mean_s
        )
    }
}

pub fn latency_to_csv(rows: &[LatencyReport]) -> String {
    let mut out = String::from(LATENCY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// Summary statistics of a sample of durations (seconds).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub median: f64,
    pub p99: f64,
}

impl Timing {
    /// Nearest-rank percentiles; an empty sample gives zeros.
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self {
                mean: 0.0,
                median: 0.0,
                p99: 0.0,
            };
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: rank(0.5),
            p99: rank(0.99),
        }
    }
}

/// Random complete sequence with id `id`, spread apart in frames and arc
/// length so that any two synthetic sequences are admissible in both modes
/// except for the session rule in place recognition.
pub fn synthetic_sequence(
    rng: &mut impl Rng,
    id: u64,
    k: usize,
    alphabet: &[MarkingLabel],
    session: u32,
) -> MarkingSequence {
    let first = id * 1_000_000;
    let mut x = id as f64 * 1.0e6;
    let mut entries = Vec::with_capacity(k);
    for i in 0..k {
        if i > 0 {
            x += rng.random_range(5.0..25.0);
        }
        entries.push(SequenceEntry {
            instance_id: id * k as u64 + i as u64,
            label: alphabet[rng.random_range(0..alphabet.len())].clone(),
            position: Vector3::new(x, 0.0, 0.0),
            first_frame: first + i as u64,
            last_frame: first + i as u64,
        });
    }
    let gaps = crate::database::gaps_of(&entries);
    MarkingSequence {
        sequence_id: id,
        session,
        track_id: 0,
        frame_range: (first, first + k as u64 - 1),
        arc_range: (entries[0].position.x, entries[k - 1].position.x),
        entries,
        gaps,
    }
}

/// Snapshot of `n` synthetic sequences drawn from `alphabet`.
pub fn synthetic_snapshot(
    rng: &mut impl Rng,
    n: usize,
    cfg: &EngineConfig,
    alphabet: &[MarkingLabel],
) -> Result<DatabaseSnapshot> {
    let seqs = (0..n as u64)
        .map(|id| synthetic_sequence(rng, id, cfg.k, alphabet, 0))
        .collect();
    DatabaseSnapshot::from_sequences(cfg.clone(), seqs)
}

/// Times one-sequence inquiries against synthetic databases of each size,
/// over `queries` fresh query sequences, on both matching paths. Loop
/// detection mode is used so that every pair is admissible and only the
/// matching predicate decides.
pub fn bench_query(
    sizes: &[usize],
    cfg: &EngineConfig,
    queries: usize,
    seed: u64,
) -> Result<Vec<LatencyReport>> {
    cfg.validate()?;
    if queries < 100 {
        return Err(Error::invalid(format!(
            "latency statistics need at least 100 inquiries, got {queries}"
        )));
    }
    let alphabet = default_alphabet();
    let mode = MatchMode::LoopDetection;
    let mut out = Vec::new();
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let snap = synthetic_snapshot(&mut rng, n, cfg, &alphabet)?;
        let build_started = Instant::now();
        let index = SignatureIndex::from_snapshot(&snap);
        let index_update = build_started.elapsed().as_secs_f64() / n.max(1) as f64;
        let probes: Vec<Arc<MarkingSequence>> = (0..queries)
            .map(|_| Arc::new(synthetic_sequence(&mut rng, n as u64, cfg.k, &alphabet, 0)))
            .collect();

        let mut times = Vec::with_capacity(queries);
        let mut comparisons = 0u64;
        let mut updates = Vec::with_capacity(queries);
        for probe in &probes {
            let started = Instant::now();
            let report = index.query(&snap, probe, cfg, mode);
            times.push(started.elapsed().as_secs_f64());
            comparisons += report.comparisons_performed;
            let mut scratch = SignatureIndex::new();
            let started = Instant::now();
            scratch.insert(probe);
            updates.push(started.elapsed().as_secs_f64());
        }
        let t = Timing::of(&times);
        out.push(LatencyReport {
            db_size: n,
            path: QueryPath::Indexed,
            mean_s: t.mean,
            median_s: t.median,
            p99_s: t.p99,
            comparisons: (comparisons as f64 / queries as f64).round() as u64,
            update_mean_s: Timing::of(&updates).mean.max(index_update),
        });

        let mut times = Vec::with_capacity(queries);
        let mut comparisons = 0u64;
        for probe in &probes {
            let started = Instant::now();
            let report = incremental_match(&snap, std::slice::from_ref(probe), cfg, mode);
            times.push(started.elapsed().as_secs_f64());
            comparisons += report.comparisons_performed;
        }
        let t = Timing::of(&times);
        out.push(LatencyReport {
            db_size: n,
            path: QueryPath::BruteForce,
            mean_s: t.mean,
            median_s: t.median,
            p99_s: t.p99,
            comparisons: (comparisons as f64 / queries as f64).round() as u64,
            update_mean_s: 0.0,
        });
        log::info!(
            "n={n}: indexed median {:.3e} s, brute force median {:.3e} s",
            out[out.len() - 2].median_s,
            t.median
        );
    }
    Ok(out)
}
