//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadseq::evaluation::{
    admissible_truth, bench_query, build_database, score_candidates, sweep_k, synthetic_snapshot,
    QueryPath,
};
use roadseq::geometry::{intersect_ground, pixel_ray};
use roadseq::matcher::{
    batch_match, incremental_match, indexed_match, MatchMode, MatchReport, OnlineMatcher,
};
use roadseq::simulator::{
    default_alphabet, generate_world, simulate_drive, NoiseSpec, SensorSpec, Separability,
    WorldSpec,
};
use roadseq::{
    CameraIntrinsics, CameraPose, EngineConfig, GroundPlane, MarkingLabel, MarkingSequence,
    Observation3D, PoseRecord, Ray, SequenceDatabase, SessionDetections, SessionLog,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("comparison count", comparison_count),
        ("k-sweep trend", k_sweep_trend),
        ("noiseless recall", noiseless_recall),
        ("inquiry timing", inquiry_timing),
        ("ground intersection", ground_intersection),
        ("database invariants", database_invariants),
        ("rigid-motion invariance", rigid_motion_invariance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        if !result.pass {
            failed += 1;
        }
        println!(
            "{verdict} [{}] {name} ({:.1} s): {}",
            i + 1,
            started.elapsed().as_secs_f64(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

/// Random scenario: world size, noise, alphabet, k, epsilon and mode.
struct Scenario {
    cfg: EngineConfig,
    mode: MatchMode,
    sessions: Vec<SessionLog>,
}

fn random_scenario(seed: u64, circumference: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = WorldSpec::loop_circuit(
        seed,
        circumference,
        rng.random_range(0.0..0.4) * circumference,
    );
    let labels = rng.random_range(2..=8);
    spec.label_alphabet.truncate(labels);
    let world = generate_world(&spec).unwrap();
    let noise = NoiseSpec {
        position_sigma: rng.random_range(0.0..0.4),
        miss_prob: rng.random_range(0.0..0.2),
        label_flip_prob: rng.random_range(0.0..0.1),
        clutter_rate: rng.random_range(0.0..0.5),
    };
    let mode = if rng.random_bool(0.5) {
        MatchMode::LoopDetection
    } else {
        MatchMode::PlaceRecognition
    };
    let count = if mode == MatchMode::PlaceRecognition {
        2
    } else {
        1
    };
    let sessions = (0..count)
        .map(|s| {
            simulate_drive(&world, &noise, &SensorSpec::ground_default(), s)
                .unwrap()
                .log
        })
        .collect();
    let cfg = EngineConfig {
        k: rng.random_range(2..=6),
        epsilon: rng.random_range(0.2..1.5),
        ..EngineConfig::default()
    };
    Scenario {
        cfg,
        mode,
        sessions,
    }
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let seeds = 50u64;
    let mut max_n = 0;
    let mut total_candidates = 0;
    for seed in 0..seeds {
        // Sizes from a few dozen up to roughly 2,000 sequences.
        let circumference = if seed % 10 == 9 {
            6000.0
        } else {
            300.0 + 5000.0 * (seed as f64 / seeds as f64)
        };
        let sc = random_scenario(1000 + seed, circumference);
        let mut incremental = MatchReport::default();
        let mut online = OnlineMatcher::new(sc.cfg.clone(), sc.mode);
        let mut online_report = MatchReport::default();
        let mut db = SequenceDatabase::new(sc.cfg.clone()).unwrap();
        for s in &sc.sessions {
            s.replay(&mut db, |db, new: &[Arc<MarkingSequence>]| {
                let snap = db.snapshot();
                incremental.absorb(incremental_match(&snap, new, &sc.cfg, sc.mode));
                online_report.absorb(online.update(&snap, new));
            })
            .unwrap();
        }
        let snap = db.snapshot();
        let batch = batch_match(&snap, &sc.cfg, sc.mode);
        let indexed = indexed_match(&snap, &sc.cfg, sc.mode);
        let n = snap.len();
        max_n = max_n.max(n);
        total_candidates += batch.candidates.len();
        if indexed.candidates != batch.candidates {
            return outcome(
                false,
                format!("seed {seed}: indexed differs from batch (N = {n})"),
            );
        }
        if incremental.pairs() != batch.pairs() || online_report.pairs() != batch.pairs() {
            return outcome(
                false,
                format!("seed {seed}: incremental union differs from batch (N = {n})"),
            );
        }
    }
    let elapsed = started.elapsed();
    outcome(
        elapsed < Duration::from_secs(60),
        format!(
            "{seeds} sessions, N up to {max_n}, {total_candidates} batch candidates in total, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn comparison_count() -> Outcome {
    let cfg = EngineConfig::default();
    let alphabet = default_alphabet();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut seen = Vec::new();
    for n in [0usize, 1, 2, 5, 100, 1000] {
        let snap = synthetic_snapshot(&mut rng, n, &cfg, &alphabet).unwrap();
        for mode in [MatchMode::LoopDetection, MatchMode::PlaceRecognition] {
            let got = batch_match(&snap, &cfg, mode).comparisons_performed;
            let want = (n * n.saturating_sub(1) / 2) as u64;
            if got != want {
                return outcome(
                    false,
                    format!("N = {n}: {got} comparisons, expected {want}"),
                );
            }
        }
        seen.push(format!("{n}->{}", n * n.saturating_sub(1) / 2));
    }
    outcome(true, seen.join(", "))
}

fn k_sweep_trend() -> Outcome {
    let started = Instant::now();
    let noise = NoiseSpec {
        position_sigma: 0.3,
        miss_prob: 0.1,
        label_flip_prob: 0.05,
        clutter_rate: 0.0,
    };
    let ks: Vec<usize> = (2..=8).collect();
    let cfg = EngineConfig::default();
    let mut holding = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let world = generate_world(&WorldSpec::loop_circuit(seed, 2500.0, 500.0)).unwrap();
        let sim = simulate_drive(&world, &noise, &SensorSpec::pixel_default(), 0).unwrap();
        let rows = sweep_k(&world, &[sim.log], &ks, &cfg, MatchMode::LoopDetection).unwrap();
        let counts_ok = rows
            .windows(2)
            .all(|w| w[1].num_candidates <= w[0].num_candidates);
        let pcts: Vec<f64> = rows.iter().filter_map(|r| r.pct_correct).collect();
        let precision_ok = pcts.windows(2).all(|w| w[1] >= w[0]);
        let perfect = rows
            .iter()
            .any(|r| r.k <= 6 && r.pct_correct == Some(100.0));
        if counts_ok && precision_ok && perfect {
            holding += 1;
        }
        if seed == 0 {
            lines = rows.iter().map(ToString::to_string).collect();
        }
    }
    let elapsed = started.elapsed();
    outcome(
        holding >= 9 && elapsed < Duration::from_secs(120),
        format!(
            "trend holds for {holding}/10 seeds in {:.1} s; seed 0: {}",
            elapsed.as_secs_f64(),
            lines.join(" | ")
        ),
    )
}

fn noiseless_recall() -> Outcome {
    let cfg = EngineConfig {
        k: 4,
        epsilon: 0.5,
        ..EngineConfig::default()
    };
    let mut truth_total = 0;
    for seed in 0..20u64 {
        let revisit = 300.0;
        let mut spec = WorldSpec::loop_circuit(seed, 2000.0, revisit);
        spec.separable = Some(Separability {
            window: cfg.k,
            tolerance: cfg.epsilon,
        });
        let world = generate_world(&spec).unwrap();
        let revisited = world
            .markings
            .iter()
            .filter(|m| m.lane == world.spec.drive_lane && m.arc <= revisit)
            .count();
        if revisited < cfg.k + 3 {
            return outcome(
                false,
                format!("seed {seed}: revisit covers only {revisited} markings"),
            );
        }
        let sim = simulate_drive(
            &world,
            &NoiseSpec::noiseless(),
            &SensorSpec::pixel_default(),
            0,
        )
        .unwrap();
        let mut db = build_database(&[sim.log], &cfg).unwrap();
        let snap = db.snapshot();
        let report = indexed_match(&snap, &cfg, MatchMode::LoopDetection);
        let truth = admissible_truth(&world, &snap, &cfg, MatchMode::LoopDetection);
        let score = score_candidates(report.pairs(), &truth);
        if truth.is_empty() {
            return outcome(false, format!("seed {seed}: no ground-truth pairs"));
        }
        if score.num_correct != truth.len() || score.num_candidates != score.num_correct {
            return outcome(
                false,
                format!(
                    "seed {seed}: {} of {} truth pairs found, {} false candidates",
                    score.num_correct,
                    truth.len(),
                    score.num_candidates - score.num_correct
                ),
            );
        }
        truth_total += truth.len();
    }
    outcome(
        true,
        format!("20 seeds, {truth_total} truth pairs, all found, no false candidates"),
    )
}

fn inquiry_timing() -> Outcome {
    let cfg = EngineConfig::default();
    let rows = bench_query(&[10_000], &cfg, 200, 5).unwrap();
    let indexed = rows.iter().find(|r| r.path == QueryPath::Indexed).unwrap();
    let brute = rows
        .iter()
        .find(|r| r.path == QueryPath::BruteForce)
        .unwrap();
    outcome(
        indexed.median_s <= 0.010,
        format!(
            "N = 10000, k = 4: indexed median {:.3} ms (p99 {:.3} ms, {} comparisons), brute force median {:.3} ms ({} comparisons)",
            indexed.median_s * 1e3,
            indexed.p99_s * 1e3,
            indexed.comparisons,
            brute.median_s * 1e3,
            brute.comparisons
        ),
    )
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn ground_intersection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let cases = 10_000;
    for i in 0..cases {
        // Pick the hit point first, then shoot a ray at it from off the plane.
        let normal = random_unit(&mut rng);
        let offset = rng.random_range(-50.0..50.0);
        let plane = GroundPlane::new(normal, offset).unwrap();
        let anchor = offset * normal;
        let t1 = normal.cross(&random_unit(&mut rng)).normalize();
        let t2 = normal.cross(&t1);
        let target =
            anchor + rng.random_range(-100.0..100.0) * t1 + rng.random_range(-100.0..100.0) * t2;
        let height = rng.random_range(0.2..20.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let origin = target
            + height * normal
            + rng.random_range(-30.0..30.0) * t1
            + rng.random_range(-30.0..30.0) * t2;
        let ray = Ray {
            origin,
            direction: (target - origin).normalize(),
        };
        let Some(hit) = intersect_ground(&ray, &plane) else {
            return outcome(false, format!("case {i}: no intersection"));
        };
        let err = (hit - target).norm() / target.norm().max(1.0);
        worst = worst.max(err);
        let away = Ray {
            origin,
            direction: -ray.direction,
        };
        if intersect_ground(&away, &plane).is_some() {
            return outcome(false, format!("case {i}: hit behind the camera"));
        }
    }

    // Principal ray of a camera at height h pitched down by p meets the road at h / tan(p).
    let intr = CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0, 1280, 720).unwrap();
    let plane = GroundPlane::default();
    for _ in 0..1000 {
        let h = rng.random_range(0.5..5.0);
        let pitch = rng.random_range(2f64.to_radians()..80f64.to_radians());
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let base = Vector3::new(
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            0.0,
        );
        let pose = CameraPose::forward_facing(base + Vector3::new(0.0, 0.0, h), yaw, pitch);
        let ray = pixel_ray(&intr, &pose, (intr.cx, intr.cy)).unwrap();
        let hit = intersect_ground(&ray, &plane).unwrap();
        let d = h / pitch.tan();
        let expected = base + d * Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let err = (hit - expected).norm() / expected.norm().max(1.0);
        worst = worst.max(err);
    }
    outcome(
        worst <= 1e-9,
        format!(
            "{cases} random rays + 1000 pitched-camera cases, worst relative error {worst:.2e}"
        ),
    )
}

fn obs(frame: u64, label: &MarkingLabel, x: f64, y: f64) -> Observation3D {
    Observation3D {
        frame_id: frame,
        label: label.clone(),
        position: Vector3::new(x, y, 0.0),
    }
}

/// Per-frame observations of markings `(x, y, label, first_frame, frames_seen)`.
fn frames_of(
    markings: &[(f64, f64, usize, u64, u64)],
    labels: &[MarkingLabel],
) -> Vec<(u64, Vec<Observation3D>)> {
    let last = markings.iter().map(|m| m.3 + m.4).max().unwrap_or(0);
    (0..=last)
        .map(|f| {
            let o = markings
                .iter()
                .filter(|m| (m.3..m.3 + m.4).contains(&f))
                .map(|m| obs(f, &labels[m.2], m.0, m.1))
                .collect();
            (f, o)
        })
        .collect()
}

fn database_invariants() -> Outcome {
    let labels: Vec<MarkingLabel> = default_alphabet().into_iter().take(4).collect();
    let cases = 256;
    let runner = || {
        TestRunner::new(PropConfig {
            cases,
            failure_persistence: None,
            ..PropConfig::default()
        })
    };

    // Single-track stream: exactly n - k + 1 windows of consecutive markings.
    let single = (
        2usize..8,
        prop::collection::vec((4.0f64..30.0, 0usize..4, 1u64..4, 1u64..5), 0..40),
    );
    let executed = AtomicUsize::new(0);
    let windows = runner().run(&single, |(k, spec)| {
        executed.fetch_add(1, Ordering::Relaxed);
        let cfg = EngineConfig {
            k,
            min_observations: 1,
            ..EngineConfig::default()
        };
        let mut x = 0.0;
        let mut first = 0;
        let markings: Vec<_> = spec
            .iter()
            .map(|&(gap, label, step, seen)| {
                x += gap;
                first += step;
                (x, 0.0, label, first, seen)
            })
            .collect();
        let mut db = SequenceDatabase::new(cfg).unwrap();
        for (f, o) in frames_of(&markings, &labels) {
            db.ingest_observations(f, Vector3::new(f as f64, 0.0, 1.5), &o)
                .unwrap();
        }
        db.finish_session();
        let n = markings.len();
        let complete = db.complete();
        prop_assert_eq!(complete.len(), (n + 1).saturating_sub(k));
        for (j, s) in complete.iter().enumerate() {
            let xs: Vec<f64> = s.entries.iter().map(|e| e.position.x).collect();
            let want: Vec<f64> = markings[j..j + k].iter().map(|m| m.0).collect();
            prop_assert_eq!(xs, want);
        }
        Ok(())
    });
    if let Err(e) = windows {
        return outcome(false, format!("sliding-window completeness: {e}"));
    }

    // Multi-lane streams with many markings first seen in the same frame.
    let multi = (
        2usize..6,
        prop::collection::vec(
            (0usize..3, 4.0f64..25.0, 0usize..4, 0u64..3, 1u64..4),
            0..60,
        ),
    );
    let exclusivity = runner().run(&multi, |(k, spec)| {
        executed.fetch_add(1, Ordering::Relaxed);
        let cfg = EngineConfig {
            k,
            min_observations: 1,
            ..EngineConfig::default()
        };
        let mut along = [0.0f64; 3];
        let mut first = 0;
        let markings: Vec<_> = spec
            .iter()
            .map(|&(lane, gap, label, step, seen)| {
                along[lane] += gap;
                first += step;
                (along[lane], 3.5 * lane as f64, label, first, seen)
            })
            .collect();
        let mut db = SequenceDatabase::new(cfg).unwrap();
        let mut frozen: Vec<Arc<MarkingSequence>> = Vec::new();
        for (f, o) in frames_of(&markings, &labels) {
            db.ingest_observations(f, Vector3::new(f as f64, 0.0, 1.5), &o)
                .unwrap();
            frozen.extend(db.complete()[frozen.len()..].iter().cloned());
            check_frozen(&db, &frozen)?;
        }
        db.finish_session();
        frozen.extend(db.complete()[frozen.len()..].iter().cloned());
        check_frozen(&db, &frozen)?;
        for s in db.complete() {
            let firsts: BTreeSet<u64> = s.entries.iter().map(|e| e.first_frame).collect();
            prop_assert_eq!(
                firsts.len(),
                s.entries.len(),
                "same-frame instances share sequence {}",
                s.sequence_id
            );
        }
        Ok(())
    });
    if let Err(e) = exclusivity {
        return outcome(false, format!("same-frame exclusivity / immutability: {e}"));
    }
    outcome(
        true,
        format!(
            "{} random streams ({cases} single-track, {cases} multi-lane): window count, exclusivity, immutability",
            executed.load(Ordering::Relaxed)
        ),
    )
}

/// Every sequence handed out earlier is still present and unchanged.
fn check_frozen(
    db: &SequenceDatabase,
    frozen: &[Arc<MarkingSequence>],
) -> Result<(), TestCaseError> {
    for s in frozen {
        let now = &db.complete()[s.sequence_id as usize];
        prop_assert_eq!(
            now.as_ref(),
            s.as_ref(),
            "sequence {} changed",
            s.sequence_id
        );
    }
    Ok(())
}

fn transform_session(log: &SessionLog, rot: &Rotation3<f64>, shift: &Vector3<f64>) -> SessionLog {
    let q = UnitQuaternion::from_rotation_matrix(rot);
    let poses = log
        .poses
        .iter()
        .map(|p| PoseRecord {
            frame: p.frame,
            timestamp: p.timestamp,
            pose: CameraPose {
                position: rot * p.pose.position + shift,
                orientation: q * p.pose.orientation,
            },
        })
        .collect();
    let SessionDetections::Ground(o) = &log.detections else {
        panic!("direct-3D session expected");
    };
    let detections = SessionDetections::Ground(
        o.iter()
            .map(|o| Observation3D {
                frame_id: o.frame_id,
                label: o.label.clone(),
                position: rot * o.position + shift,
            })
            .collect(),
    );
    SessionLog {
        poses,
        detections,
        rig: None,
    }
}

fn rigid_motion_invariance() -> Outcome {
    let noise = NoiseSpec {
        position_sigma: 0.3,
        miss_prob: 0.1,
        label_flip_prob: 0.05,
        clutter_rate: 0.2,
    };
    let cfg = EngineConfig::default();
    let mut total = 0;
    for seed in 0..20u64 {
        let world = generate_world(&WorldSpec::loop_circuit(seed, 1500.0, 0.0)).unwrap();
        let a = simulate_drive(&world, &noise, &SensorSpec::ground_default(), 0)
            .unwrap()
            .log;
        let b = simulate_drive(&world, &noise, &SensorSpec::ground_default(), 1)
            .unwrap()
            .log;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let axis = nalgebra::Unit::new_normalize(random_unit(&mut rng));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
        let shift = Vector3::new(
            rng.random_range(-1e4..1e4),
            rng.random_range(-1e4..1e4),
            rng.random_range(-1e3..1e3),
        );
        let moved = transform_session(&b, &rot, &shift);
        let mut plain = build_database(&[a.clone(), b], &cfg).unwrap();
        let mut shifted = build_database(&[a, moved], &cfg).unwrap();
        let p = indexed_match(&plain.snapshot(), &cfg, MatchMode::PlaceRecognition).pairs();
        let s = indexed_match(&shifted.snapshot(), &cfg, MatchMode::PlaceRecognition).pairs();
        if p.is_empty() {
            return outcome(false, format!("seed {seed}: no candidates to compare"));
        }
        if p != s {
            return outcome(
                false,
                format!(
                    "seed {seed}: {} candidates before, {} after, {} in common",
                    p.len(),
                    s.len(),
                    p.intersection(&s).count()
                ),
            );
        }
        total += p.len();
    }
    outcome(
        true,
        format!(
            "20 seeds, {total} place-recognition candidates unchanged under rotation + translation"
        ),
    )
}
