use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use roadseq::config::ConfigFile;
use roadseq::database::IngestStats;
use roadseq::evaluation::{bench_query, latency_to_csv, parse_k_range, sweep_k, sweep_to_csv};
use roadseq::io::{self, RunManifest};
use roadseq::matcher::{batch_match, incremental_match, indexed_match, MatchMode, MatchReport};
use roadseq::simulator::{
    generate_world, simulate_drive, NoiseSpec, SensorOutput, SensorSpec, World, WorldSpec,
};
use roadseq::{
    DatabaseSnapshot, EngineConfig, SequenceDatabase, SessionLog, ENGINE_VERSION, SCHEMA_VERSION,
};

use crate::{
    BenchArgs, Cli, Command, EngineOverrides, IngestArgs, MatchArgs, ModeArg, PathArg,
    ScenarioArgs, SensorKind, SimulateArgs, SweepArgs,
};

const SIMULATION_FILE: &str = "simulation.json";
const CAMERA_FILE: &str = "camera.cfg";

/// What a simulation run was made of; enough to regenerate the world.
#[derive(Debug, Serialize, Deserialize)]
struct SimulationSetup {
    world: WorldSpec,
    noise: NoiseSpec,
    sensor: SensorSpec,
    session_seeds: Vec<u64>,
}

/// Manifest details contributed by a subcommand.
#[derive(Default)]
struct RunInfo {
    inputs: Vec<PathBuf>,
    mode: Option<String>,
    seed: Option<u64>,
}

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<()> {
    let started_at = now();
    let g = &cli.global;
    std::fs::create_dir_all(&g.out)
        .with_context(|| format!("cannot create output directory {}", g.out.display()))?;
    let config = match &g.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let (name, info) = match &cli.command {
        Command::Simulate(a) => ("simulate", simulate(cli, &config, a)?),
        Command::Ingest(a) => ("ingest", ingest(cli, &config, a)?),
        Command::Match(a) => ("match", run_match(cli, &config, a)?),
        Command::Sweep(a) => ("sweep", sweep(cli, &config, a)?),
        Command::Bench(a) => ("bench", bench(cli, &config, a)?),
    };
    let mut inputs = info.inputs;
    if let Some(c) = &g.config {
        inputs.insert(0, c.clone());
    }
    RunManifest {
        command: name.to_string(),
        argv,
        config_path: g.config.clone(),
        inputs,
        output_dir: g.out.clone(),
        mode: info.mode,
        seed: info.seed,
        engine_version: ENGINE_VERSION.to_string(),
        schema_version: SCHEMA_VERSION,
        started_at,
        finished_at: now(),
    }
    .write(&g.out)?;
    Ok(())
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn mode_of(m: ModeArg) -> MatchMode {
    match m {
        ModeArg::Place => MatchMode::PlaceRecognition,
        ModeArg::Loop => MatchMode::LoopDetection,
    }
}

fn engine_config(config: &ConfigFile, o: &EngineOverrides) -> Result<EngineConfig> {
    let mut cfg = config.engine.clone();
    if let Some(k) = o.k {
        cfg.k = k;
    }
    if let Some(e) = o.epsilon {
        cfg.epsilon = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_text(path, &text)?;
    Ok(())
}

fn scenario(cli: &Cli, config: &ConfigFile, s: &ScenarioArgs) -> Result<(World, SimulationSetup)> {
    ensure!(s.sessions >= 1, "--sessions must be at least 1");
    let spec = WorldSpec::loop_circuit(cli.global.seed, s.circumference, s.revisit);
    let world = generate_world(&spec)?;
    let noise = NoiseSpec {
        position_sigma: s.sigma,
        miss_prob: s.miss,
        label_flip_prob: s.flip,
        clutter_rate: s.clutter,
    };
    noise.validate()?;
    let mut sensor = match s.sensor {
        SensorKind::Pixel => SensorSpec::pixel_default(),
        SensorKind::Ground => SensorSpec::ground_default(),
    };
    if let (SensorKind::Pixel, Some(intr)) = (s.sensor, config.intrinsics) {
        sensor.output = SensorOutput::Pixel(intr);
    }
    let setup = SimulationSetup {
        world: spec,
        noise,
        sensor,
        session_seeds: (0..u64::from(s.sessions)).collect(),
    };
    Ok((world, setup))
}

fn session_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("session_{seed}"))
}

fn simulate(cli: &Cli, config: &ConfigFile, a: &SimulateArgs) -> Result<RunInfo> {
    let out = &cli.global.out;
    let (world, setup) = scenario(cli, config, &a.scenario)?;
    for &seed in &setup.session_seeds {
        let sim = simulate_drive(&world, &setup.noise, &setup.sensor, seed)?;
        let dir = session_dir(out, seed);
        io::write_session_dir(&dir, &sim.log)?;
        io::write_text(&dir.join("truth_links.csv"), &io::truth_links_csv(&sim))?;
        io::write_text(
            &dir.join("truth_visibility.csv"),
            &io::truth_visibility_csv(&sim),
        )?;
        if let Some(rig) = sim.log.rig {
            let camera = ConfigFile {
                engine: config.engine.clone(),
                intrinsics: Some(rig.intrinsics),
                plane: rig.plane,
            };
            io::write_text(&dir.join(CAMERA_FILE), &camera.render())?;
        }
        log::info!(
            "session {seed}: {} frames, {} detections",
            sim.log.poses.len(),
            sim.log.detections.len()
        );
    }
    io::write_text(
        &out.join("truth_markings.csv"),
        &io::truth_markings_csv(&world),
    )?;
    write_json(&out.join(SIMULATION_FILE), &setup)?;
    Ok(RunInfo {
        seed: Some(cli.global.seed),
        ..RunInfo::default()
    })
}

/// Reads session directories. Pixel sessions take the camera from the config
/// file, or from the `camera.cfg` that `simulate` leaves in the directory.
fn load_sessions(cli: &Cli, config: &ConfigFile, dirs: &[PathBuf]) -> Result<Vec<SessionLog>> {
    dirs.iter()
        .map(|dir| {
            let rig = match config.rig() {
                Some(rig) => Some(rig),
                None => {
                    let cam = dir.join(CAMERA_FILE);
                    if cam.exists() {
                        ConfigFile::load(&cam)?.rig()
                    } else {
                        None
                    }
                }
            };
            let (log, skipped) = io::read_session_dir(dir, rig, cli.global.skip_bad_records)
                .with_context(|| format!("reading session {}", dir.display()))?;
            if skipped > 0 {
                log::warn!("{}: skipped {skipped} malformed records", dir.display());
            }
            Ok(log)
        })
        .collect()
}

fn build(
    sessions: &[SessionLog],
    cfg: &EngineConfig,
    mut on_update: impl FnMut(&mut SequenceDatabase, &[std::sync::Arc<roadseq::MarkingSequence>]),
) -> Result<SequenceDatabase> {
    let mut db = SequenceDatabase::new(cfg.clone())?;
    for s in sessions {
        s.replay(&mut db, &mut on_update)?;
    }
    Ok(db)
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    sessions: usize,
    sequences: usize,
    stats: &'a IngestStats,
}

fn ingest(cli: &Cli, config: &ConfigFile, a: &IngestArgs) -> Result<RunInfo> {
    let cfg = engine_config(config, &a.engine)?;
    let sessions = load_sessions(cli, config, &a.sessions)?;
    let mut db = build(&sessions, &cfg, |_, _| {})?;
    let snap = db.snapshot();
    let out = &cli.global.out;
    io::write_database(&out.join(io::DATABASE_FILE), &snap)?;
    write_json(
        &out.join("ingest_summary.json"),
        &IngestSummary {
            sessions: sessions.len(),
            sequences: snap.len(),
            stats: db.stats(),
        },
    )?;
    log::info!("{} complete sequences", snap.len());
    Ok(RunInfo {
        inputs: a.sessions.clone(),
        ..RunInfo::default()
    })
}

#[derive(Serialize)]
struct MatchSummary {
    mode: String,
    path: String,
    k: usize,
    epsilon: f64,
    sequences: usize,
    comparisons_performed: u64,
    candidates: usize,
}

fn run_match(cli: &Cli, config: &ConfigFile, a: &MatchArgs) -> Result<RunInfo> {
    let mode = mode_of(a.mode);
    let out = &cli.global.out;
    let (snap, cfg, report, inputs) = if let Some(path) = &a.database {
        let snap = io::read_database(path)?;
        let mut cfg = snap.config().clone();
        if let Some(k) = a.engine.k {
            if k != cfg.k {
                bail!("--k {k} differs from the database's k = {}", cfg.k);
            }
        }
        if let Some(e) = a.engine.epsilon {
            cfg.epsilon = e;
        }
        cfg.validate()?;
        let report = match a.path {
            PathArg::Indexed => indexed_match(&snap, &cfg, mode),
            PathArg::Batch => batch_match(&snap, &cfg, mode),
            PathArg::Incremental => {
                let mut report = MatchReport::default();
                for s in snap.sequences() {
                    report.absorb(incremental_match(
                        &snap,
                        std::slice::from_ref(s),
                        &cfg,
                        mode,
                    ));
                }
                report
            }
        };
        (snap, cfg, report, vec![path.clone()])
    } else {
        let cfg = engine_config(config, &a.engine)?;
        let sessions = load_sessions(cli, config, &a.sessions)?;
        let mut incremental = MatchReport::default();
        let mut db = build(&sessions, &cfg, |db, new| {
            if a.path == PathArg::Incremental {
                let snap = db.snapshot();
                incremental.absorb(incremental_match(&snap, new, &cfg, mode));
            }
        })?;
        let snap = db.snapshot();
        let report = match a.path {
            PathArg::Indexed => indexed_match(&snap, &cfg, mode),
            PathArg::Batch => batch_match(&snap, &cfg, mode),
            PathArg::Incremental => incremental,
        };
        io::write_database(&out.join(io::DATABASE_FILE), &snap)?;
        (snap, cfg, report, a.sessions.clone())
    };
    write_outputs(out, &snap, &report)?;
    write_json(
        &out.join("match_summary.json"),
        &MatchSummary {
            mode: mode.to_string(),
            path: format!("{:?}", a.path).to_lowercase(),
            k: cfg.k,
            epsilon: cfg.epsilon,
            sequences: snap.len(),
            comparisons_performed: report.comparisons_performed,
            candidates: report.candidates.len(),
        },
    )?;
    log::info!(
        "{} candidates from {} sequences, {} comparisons, {:.3e} s",
        report.candidates.len(),
        snap.len(),
        report.comparisons_performed,
        report.query_time
    );
    Ok(RunInfo {
        inputs,
        mode: Some(mode.to_string()),
        seed: None,
    })
}

fn write_outputs(out: &Path, snap: &DatabaseSnapshot, report: &MatchReport) -> Result<()> {
    io::write_text(
        &out.join("candidates.csv"),
        &io::candidates_csv(report, snap),
    )?;
    io::write_candidates_jsonl(&out.join("candidates.jsonl"), report, snap)?;
    Ok(())
}

fn sweep(cli: &Cli, config: &ConfigFile, a: &SweepArgs) -> Result<RunInfo> {
    let ks = parse_k_range(&a.k)?;
    let mode = mode_of(a.mode);
    let mut cfg = config.engine.clone();
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    cfg.validate()?;
    let (world, sessions, inputs, seed) = match &a.sim {
        Some(dir) => {
            let path = dir.join(SIMULATION_FILE);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            let setup: SimulationSetup = serde_json::from_str(&text)
                .with_context(|| format!("malformed {}", path.display()))?;
            let world = generate_world(&setup.world)?;
            let dirs: Vec<PathBuf> = setup
                .session_seeds
                .iter()
                .map(|&s| session_dir(dir, s))
                .collect();
            let sessions = load_sessions(cli, config, &dirs)?;
            (world, sessions, vec![dir.clone()], None)
        }
        None => {
            let (world, setup) = scenario(cli, config, &a.scenario)?;
            let sessions = setup
                .session_seeds
                .iter()
                .map(|&s| simulate_drive(&world, &setup.noise, &setup.sensor, s).map(|d| d.log))
                .collect::<roadseq::Result<Vec<_>>>()?;
            (world, sessions, Vec::new(), Some(cli.global.seed))
        }
    };
    if mode == MatchMode::PlaceRecognition && sessions.len() < 2 {
        bail!("place recognition needs at least two sessions (use --sessions 2)");
    }
    let rows = sweep_k(&world, &sessions, &ks, &cfg, mode)?;
    io::write_text(&cli.global.out.join("sweep.csv"), &sweep_to_csv(&rows))?;
    Ok(RunInfo {
        inputs,
        mode: Some(mode.to_string()),
        seed,
    })
}

fn bench(cli: &Cli, config: &ConfigFile, a: &BenchArgs) -> Result<RunInfo> {
    let cfg = engine_config(config, &a.engine)?;
    let rows = bench_query(&a.sizes, &cfg, a.queries, cli.global.seed)?;
    io::write_text(&cli.global.out.join("latency.csv"), &latency_to_csv(&rows))?;
    Ok(RunInfo {
        seed: Some(cli.global.seed),
        ..RunInfo::default()
    })
}
