//! File formats: JSON-lines inputs, the database file, candidate tables,
//! simulator truth tables and run manifests.
//!
//! | file | one line per |
//! |------|--------------|
//! | poses | `{"frame", "t", "p": [x, y, z], "q": [w, x, y, z]}` |
//! | detections | `{"frame", "t", "label", "u", "v"}` |
//! | observations | `{"frame", "label", "x", "y", "z"}` |
//! | database | header `{"schema_version", "engine_version", "config", "sequences"}`, then one sequence |
//!
//! Readers report the path and 1-based line number of the first malformed
//! record, or skip malformed records when asked to.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{CameraRig, EngineConfig};
use crate::database::{DatabaseSnapshot, MarkingSequence};
use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Detection, Observation3D};
use crate::label::MarkingLabel;
use crate::matcher::MatchReport;
use crate::session::{PoseRecord, SessionDetections, SessionLog};
use crate::simulator::{SimulatedSession, World};
use crate::{ENGINE_VERSION, SCHEMA_VERSION};

pub const POSES_FILE: &str = "poses.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const DATABASE_FILE: &str = "database.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Quaternions further than this from unit norm are rejected; closer ones
/// that are not unit to 1e-9 are renormalized.
const QUATERNION_NORM_SLACK: f64 = 1e-6;

/// Records read from a file plus the number of malformed lines skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Records<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseLine {
    frame: u64,
    t: f64,
    p: [f64; 3],
    q: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    frame: u64,
    t: f64,
    label: MarkingLabel,
    u: f64,
    v: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationLine {
    frame: u64,
    label: MarkingLabel,
    x: f64,
    y: f64,
    z: f64,
}

fn pose_from_line(l: PoseLine) -> std::result::Result<PoseRecord, String> {
    let norm = l.q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let q = if (norm - 1.0).abs() > 1e-9 && (norm - 1.0).abs() <= QUATERNION_NORM_SLACK {
        l.q.map(|c| c / norm)
    } else {
        l.q
    };
    if !l.t.is_finite() {
        return Err("timestamp is not finite".into());
    }
    let pose = CameraPose::from_wxyz(l.p, q).map_err(|e| e.to_string())?;
    Ok(PoseRecord {
        frame: l.frame,
        timestamp: l.t,
        pose,
    })
}

fn detection_from_line(l: DetectionLine) -> std::result::Result<Detection, String> {
    if ![l.t, l.u, l.v].iter().all(|c| c.is_finite()) {
        return Err("non-finite timestamp or centroid".into());
    }
    Ok(Detection {
        frame_id: l.frame,
        timestamp: l.t,
        label: l.label,
        centroid: (l.u, l.v),
    })
}

fn observation_from_line(l: ObservationLine) -> std::result::Result<Observation3D, String> {
    if ![l.x, l.y, l.z].iter().all(|c| c.is_finite()) {
        return Err("non-finite position".into());
    }
    Ok(Observation3D {
        frame_id: l.frame,
        label: l.label,
        position: Vector3::new(l.x, l.y, l.z),
    })
}

/// Reads a JSON-lines file, converting each non-blank line with `convert`.
fn read_jsonl<L, T>(
    path: &Path,
    skip_bad_records: bool,
    convert: impl Fn(L) -> std::result::Result<T, String>,
) -> Result<Records<T>>
where
    L: DeserializeOwned,
{
    let reader = BufReader::new(File::open(path).map_err(|e| with_path(e, path))?);
    let mut records = Vec::new();
    let mut skipped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<L>(&line)
            .map_err(|e| e.to_string())
            .and_then(&convert);
        match parsed {
            Ok(r) => records.push(r),
            Err(message) if skip_bad_records => {
                log::warn!(
                    "{}:{}: skipping malformed record: {message}",
                    path.display(),
                    idx + 1
                );
                skipped += 1;
            }
            Err(message) => {
                return Err(Error::MalformedRecord {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message,
                })
            }
        }
    }
    Ok(Records { records, skipped })
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| with_path(e, path))?,
    ))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_poses(path: &Path, skip_bad_records: bool) -> Result<Records<PoseRecord>> {
    read_jsonl(path, skip_bad_records, pose_from_line)
}

pub fn read_detections(path: &Path, skip_bad_records: bool) -> Result<Records<Detection>> {
    read_jsonl(path, skip_bad_records, detection_from_line)
}

pub fn read_observations(path: &Path, skip_bad_records: bool) -> Result<Records<Observation3D>> {
    read_jsonl(path, skip_bad_records, observation_from_line)
}

pub fn write_poses(path: &Path, poses: &[PoseRecord]) -> Result<()> {
    write_jsonl(
        path,
        poses.iter().map(|p| PoseLine {
            frame: p.frame,
            t: p.timestamp,
            p: p.pose.position.into(),
            q: p.pose.wxyz(),
        }),
    )
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_jsonl(
        path,
        detections.iter().map(|d| DetectionLine {
            frame: d.frame_id,
            t: d.timestamp,
            label: d.label.clone(),
            u: d.centroid.0,
            v: d.centroid.1,
        }),
    )
}

pub fn write_observations(path: &Path, observations: &[Observation3D]) -> Result<()> {
    write_jsonl(
        path,
        observations.iter().map(|o| ObservationLine {
            frame: o.frame_id,
            label: o.label.clone(),
            x: o.position.x,
            y: o.position.y,
            z: o.position.z,
        }),
    )
}

/// Writes `poses.jsonl` and either `detections.jsonl` or `observations.jsonl`.
pub fn write_session_dir(dir: &Path, log: &SessionLog) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| with_path(e, dir))?;
    write_poses(&dir.join(POSES_FILE), &log.poses)?;
    match &log.detections {
        SessionDetections::Pixel(d) => write_detections(&dir.join(DETECTIONS_FILE), d),
        SessionDetections::Ground(o) => write_observations(&dir.join(OBSERVATIONS_FILE), o),
    }
}

/// Reads a session directory. Exactly one of `detections.jsonl` and
/// `observations.jsonl` must exist; pixel detections need `rig`.
pub fn read_session_dir(
    dir: &Path,
    rig: Option<CameraRig>,
    skip_bad_records: bool,
) -> Result<(SessionLog, usize)> {
    let poses = read_poses(&dir.join(POSES_FILE), skip_bad_records)?;
    let det_path = dir.join(DETECTIONS_FILE);
    let obs_path = dir.join(OBSERVATIONS_FILE);
    let (detections, skipped) = match (det_path.exists(), obs_path.exists()) {
        (true, false) => {
            let r = read_detections(&det_path, skip_bad_records)?;
            (SessionDetections::Pixel(r.records), r.skipped)
        }
        (false, true) => {
            let r = read_observations(&obs_path, skip_bad_records)?;
            (SessionDetections::Ground(r.records), r.skipped)
        }
        (true, true) => {
            return Err(Error::invalid(format!(
                "{}: both {DETECTIONS_FILE} and {OBSERVATIONS_FILE} present",
                dir.display()
            )))
        }
        (false, false) => {
            return Err(Error::invalid(format!(
                "{}: neither {DETECTIONS_FILE} nor {OBSERVATIONS_FILE} found",
                dir.display()
            )))
        }
    };
    let log = SessionLog {
        poses: poses.records,
        detections,
        rig,
    };
    log.validate()?;
    Ok((log, poses.skipped + skipped))
}

#[derive(Serialize, Deserialize)]
struct DatabaseHeader {
    schema_version: u32,
    engine_version: String,
    config: EngineConfig,
    sequences: usize,
}

/// Writes the complete sequences of a snapshot.
pub fn write_database(path: &Path, snap: &DatabaseSnapshot) -> Result<()> {
    let mut w = create(path)?;
    let header = DatabaseHeader {
        schema_version: SCHEMA_VERSION,
        engine_version: ENGINE_VERSION.to_string(),
        config: snap.config().clone(),
        sequences: snap.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for s in snap.sequences() {
        serde_json::to_writer(&mut w, s.as_ref()).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a database file. The header's schema version must match and its
/// sequence count must equal the number of sequence lines.
pub fn read_database(path: &Path) -> Result<DatabaseSnapshot> {
    let bad = |line: usize, message: String| Error::MalformedRecord {
        path: path.display().to_string(),
        line,
        message,
    };
    let reader = BufReader::new(File::open(path).map_err(|e| with_path(e, path))?);
    let mut lines = reader.lines().enumerate();
    let header_text = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(bad(1, "missing header".into())),
    };
    let raw: serde_json::Value =
        serde_json::from_str(&header_text).map_err(|e| bad(1, e.to_string()))?;
    let found = raw
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| bad(1, "header lacks schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            expected: SCHEMA_VERSION,
            found: u32::try_from(found).unwrap_or(u32::MAX),
        });
    }
    let header: DatabaseHeader = serde_json::from_value(raw).map_err(|e| bad(1, e.to_string()))?;
    let mut sequences = Vec::with_capacity(header.sequences);
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: MarkingSequence =
            serde_json::from_str(&line).map_err(|e| bad(idx + 1, e.to_string()))?;
        sequences.push(seq);
    }
    if sequences.len() != header.sequences {
        return Err(bad(
            1,
            format!(
                "header announces {} sequences, file holds {}",
                header.sequences,
                sequences.len()
            ),
        ));
    }
    DatabaseSnapshot::from_sequences(header.config, sequences)
}

/// Candidate table: ids, residuals (one column per gap) and both frame ranges.
pub fn candidates_csv(report: &MatchReport, snap: &DatabaseSnapshot) -> String {
    let gaps = snap.config().k - 1;
    let mut out = String::from("seq_a,seq_b,max_residual");
    for i in 1..=gaps {
        out.push_str(&format!(",residual_{i}"));
    }
    out.push_str(",a_first_frame,a_last_frame,b_first_frame,b_last_frame\n");
    for c in &report.candidates {
        out.push_str(&format!("{},{},{}", c.seq_a, c.seq_b, c.max_residual));
        for r in &c.residuals {
            out.push_str(&format!(",{r}"));
        }
        let range = |id: u64| snap.get(id).map_or((0, 0), |s| s.frame_range);
        let (a, b) = (range(c.seq_a), range(c.seq_b));
        out.push_str(&format!(",{},{},{},{}\n", a.0, a.1, b.0, b.1));
    }
    out
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    seq_a: u64,
    seq_b: u64,
    max_residual: f64,
    residuals: &'a [f64],
    label_signature: &'a [MarkingLabel],
    session_a: u32,
    session_b: u32,
    frames_a: (u64, u64),
    frames_b: (u64, u64),
}

pub fn write_candidates_jsonl(
    path: &Path,
    report: &MatchReport,
    snap: &DatabaseSnapshot,
) -> Result<()> {
    write_jsonl(
        path,
        report.candidates.iter().map(|c| {
            let a = snap
                .get(c.seq_a)
                .expect("candidate ids come from the snapshot");
            let b = snap
                .get(c.seq_b)
                .expect("candidate ids come from the snapshot");
            CandidateLine {
                seq_a: c.seq_a,
                seq_b: c.seq_b,
                max_residual: c.max_residual,
                residuals: &c.residuals,
                label_signature: &c.label_signature,
                session_a: a.session,
                session_b: b.session,
                frames_a: a.frame_range,
                frames_b: b.frame_range,
            }
        }),
    )
}

/// `id,label,lane,arc,x,y` per true marking.
pub fn truth_markings_csv(world: &World) -> String {
    let mut out = String::from("id,label,lane,arc,x,y\n");
    for m in &world.markings {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.id, m.label, m.lane, m.arc, m.position.x, m.position.y
        ));
    }
    out
}

/// `record,frame,marking_id` per emitted detection; clutter has an empty id.
pub fn truth_links_csv(sim: &SimulatedSession) -> String {
    let frames: Vec<u64> = match &sim.log.detections {
        SessionDetections::Pixel(d) => d.iter().map(|x| x.frame_id).collect(),
        SessionDetections::Ground(o) => o.iter().map(|x| x.frame_id).collect(),
    };
    let mut out = String::from("record,frame,marking_id\n");
    for (i, (frame, link)) in frames.iter().zip(&sim.truth_links).enumerate() {
        let id = link.map(|id| id.to_string()).unwrap_or_default();
        out.push_str(&format!("{i},{frame},{id}\n"));
    }
    out
}

/// `frame,marking_ids` with ids separated by `;`.
pub fn truth_visibility_csv(sim: &SimulatedSession) -> String {
    let mut out = String::from("frame,marking_ids\n");
    for (frame, ids) in &sim.visibility {
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        out.push_str(&format!("{frame},{}\n", ids.join(";")));
    }
    out
}

/// Everything needed to re-run a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub engine_version: String,
    pub schema_version: u32,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| with_path(e, &path))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Writes `text` to `path`, reporting the path on failure.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| with_path(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::SequenceDatabase;
    use crate::matcher::{batch_match, MatchMode};
    use crate::simulator::{generate_world, simulate_drive, NoiseSpec, SensorSpec, WorldSpec};

    fn sim(sensor: SensorSpec) -> (World, SimulatedSession) {
        let world = generate_world(&WorldSpec::loop_circuit(5, 900.0, 300.0)).unwrap();
        let noise = NoiseSpec {
            position_sigma: 0.2,
            miss_prob: 0.1,
            label_flip_prob: 0.05,
            clutter_rate: 0.2,
        };
        let s = simulate_drive(&world, &noise, &sensor, 0).unwrap();
        (world, s)
    }

    #[test]
    fn session_dir_round_trips_exactly() {
        for sensor in [SensorSpec::pixel_default(), SensorSpec::ground_default()] {
            let (_, s) = sim(sensor);
            let dir = tempfile::tempdir().unwrap();
            write_session_dir(dir.path(), &s.log).unwrap();
            let (back, skipped) = read_session_dir(dir.path(), s.log.rig, false).unwrap();
            assert_eq!(skipped, 0);
            assert_eq!(back, s.log);
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.jsonl");
        std::fs::write(
            &path,
            "{\"frame\":0,\"label\":\"arrow\",\"x\":1,\"y\":2,\"z\":0}\n\n{\"frame\":1,\"label\":\"arrow\",\"x\":1}\n{\"frame\":2,\"label\":\"two words\",\"x\":1,\"y\":2,\"z\":0}\n",
        )
        .unwrap();
        match read_observations(&path, false) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let r = read_observations(&path, true).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.skipped, 2);
    }

    #[test]
    fn pose_quaternion_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.jsonl");
        std::fs::write(
            &path,
            "{\"frame\":0,\"t\":0.0,\"p\":[0,0,1.5],\"q\":[1.0000001,0,0,0]}\n{\"frame\":1,\"t\":0.1,\"p\":[0,0,1.5],\"q\":[2,0,0,0]}\n",
        )
        .unwrap();
        match read_poses(&path, false) {
            Err(Error::MalformedRecord { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("norm"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let r = read_poses(&path, true).unwrap();
        assert_eq!(r.records[0].pose.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            "{\"frame\":0,\"t\":0,\"label\":\"a\",\"u\":1,\"v\":2,\"w\":3}\n",
        )
        .unwrap();
        assert!(matches!(
            read_detections(&path, false),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_poses(Path::new("/nonexistent/poses.jsonl"), false).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/poses.jsonl"));
    }

    #[test]
    fn database_round_trips_and_checks_schema() {
        let (_, s) = sim(SensorSpec::ground_default());
        let mut db = SequenceDatabase::new(EngineConfig::default()).unwrap();
        s.log.replay(&mut db, |_, _| {}).unwrap();
        let snap = db.snapshot();
        assert!(!snap.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATABASE_FILE);
        write_database(&path, &snap).unwrap();
        let back = read_database(&path).unwrap();
        assert_eq!(back.config(), snap.config());
        assert_eq!(back.sequences(), snap.sequences());

        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(
            read_database(&path),
            Err(Error::SchemaVersion {
                expected: 1,
                found: 2
            })
        ));

        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(
            read_database(&path),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn empty_database_round_trips() {
        let mut db = SequenceDatabase::new(EngineConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DATABASE_FILE);
        write_database(&path, &db.snapshot()).unwrap();
        assert!(read_database(&path).unwrap().is_empty());
    }

    #[test]
    fn candidate_table_layout() {
        let (_, s) = sim(SensorSpec::ground_default());
        let mut db = SequenceDatabase::new(EngineConfig::default()).unwrap();
        s.log.replay(&mut db, |_, _| {}).unwrap();
        let snap = db.snapshot();
        let report = batch_match(&snap, snap.config(), MatchMode::LoopDetection);
        assert!(!report.candidates.is_empty());
        let csv = candidates_csv(&report, &snap);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "seq_a,seq_b,max_residual,residual_1,residual_2,residual_3,a_first_frame,a_last_frame,b_first_frame,b_last_frame"
        );
        for (line, c) in lines.zip(&report.candidates) {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 10);
            assert_eq!(f[0].parse::<u64>().unwrap(), c.seq_a);
            assert_eq!(f[2].parse::<f64>().unwrap(), c.max_residual);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_candidates_jsonl(&path, &report, &snap).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), report.candidates.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["seq_a"], report.candidates[0].seq_a);
    }

    #[test]
    fn truth_tables_cover_everything() {
        let (world, s) = sim(SensorSpec::ground_default());
        assert_eq!(
            truth_markings_csv(&world).lines().count(),
            world.markings.len() + 1
        );
        let links = truth_links_csv(&s);
        assert_eq!(links.lines().count(), s.truth_links.len() + 1);
        assert!(links.lines().any(|l| l.ends_with(',')), "clutter rows");
        assert_eq!(
            truth_visibility_csv(&s).lines().count(),
            s.visibility.len() + 1
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "match".into(),
            argv: vec!["roadseq".into(), "match".into()],
            config_path: None,
            inputs: vec![PathBuf::from("a")],
            output_dir: dir.path().to_path_buf(),
            mode: Some("loop".into()),
            seed: Some(3),
            engine_version: ENGINE_VERSION.into(),
            schema_version: SCHEMA_VERSION,
            started_at: 1.0,
            finished_at: 2.0,
        };
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
