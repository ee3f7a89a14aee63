use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MarkingLabel;

/// Merge radius the world generator keeps markings apart for.
pub const REFERENCE_MERGE_RADIUS: f64 = 1.5;

/// Re-driven stretch: after reaching `revisit_at` on the route the vehicle
/// drives `[start, end]` again, then resumes at `revisit_at`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSegment {
    pub start: f64,
    pub end: f64,
    pub revisit_at: f64,
}

/// Requirement that no two windows of `window` consecutive markings on a lane
/// share their labels while every gap agrees within `tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Separability {
    pub window: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    /// Route centerline waypoints (m).
    pub route: Vec<[f64; 2]>,
    /// Whether the last waypoint connects back to the first.
    pub closed: bool,
    pub lanes: usize,
    /// Lane `i` runs `i * lane_spacing` to the left of the centerline.
    pub lane_spacing: f64,
    pub drive_lane: usize,
    pub marking_spacing_mean: f64,
    /// Each spacing is drawn uniformly from `mean ± jitter`.
    pub marking_spacing_jitter: f64,
    /// Route arc length of the first marking on every lane.
    pub marking_offset: f64,
    pub label_alphabet: Vec<MarkingLabel>,
    pub loop_segments: Vec<LoopSegment>,
    /// When set, labels are re-drawn until the world has no aliased windows.
    #[serde(default)]
    pub separable: Option<Separability>,
    /// Vehicle travel between consecutive frames (m).
    pub frame_step: f64,
    /// Seconds between frames.
    pub frame_dt: f64,
}

pub fn default_alphabet() -> Vec<MarkingLabel> {
    [
        "straight-arrow",
        "left-arrow",
        "right-arrow",
        "straight-left-arrow",
        "straight-right-arrow",
        "crosswalk",
        "stop-line",
        "diamond",
    ]
    .iter()
    .map(|s| MarkingLabel::new(s).expect("static label"))
    .collect()
}

impl WorldSpec {
    /// Circular two-lane circuit of the given length, driven once and then
    /// re-driven for its first `revisit_length` metres.
    pub fn loop_circuit(seed: u64, circumference: f64, revisit_length: f64) -> Self {
        let vertices = ((circumference / 2.0).ceil() as usize).max(16);
        let radius = circumference / std::f64::consts::TAU;
        let route = (0..vertices)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / vertices as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect::<Vec<_>>();
        let mut spec = Self {
            seed,
            route,
            closed: true,
            lanes: 2,
            lane_spacing: 3.5,
            drive_lane: 0,
            marking_spacing_mean: 15.0,
            marking_spacing_jitter: 5.0,
            marking_offset: 0.0,
            label_alphabet: default_alphabet(),
            loop_segments: Vec::new(),
            separable: None,
            frame_step: 1.0,
            frame_dt: 0.1,
        };
        let length = Polyline::new(&spec.route, true).length();
        if revisit_length > 0.0 {
            spec.loop_segments.push(LoopSegment {
                start: 0.0,
                end: revisit_length.min(length),
                revisit_at: length,
            });
        }
        spec
    }

    /// Straight single-lane road along +x without revisits.
    pub fn straight(seed: u64, length: f64) -> Self {
        Self {
            seed,
            route: vec![[0.0, 0.0], [length, 0.0]],
            closed: false,
            lanes: 1,
            lane_spacing: 3.5,
            drive_lane: 0,
            marking_spacing_mean: 10.0,
            marking_spacing_jitter: 0.0,
            marking_offset: 0.0,
            label_alphabet: default_alphabet(),
            loop_segments: Vec::new(),
            separable: None,
            frame_step: 1.0,
            frame_dt: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.route.len() < 2 {
            return Err(Error::invalid("route needs at least two waypoints"));
        }
        if self.route.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("route waypoints must be finite"));
        }
        let length = Polyline::new(&self.route, self.closed).length();
        if length <= 0.0 {
            return Err(Error::invalid("route has zero length"));
        }
        if self.lanes == 0 || self.drive_lane >= self.lanes {
            return Err(Error::invalid(format!(
                "drive lane {} not among {} lanes",
                self.drive_lane, self.lanes
            )));
        }
        if self.lane_spacing.is_nan() || self.lane_spacing <= 0.0 {
            return Err(Error::invalid("lane spacing must be positive"));
        }
        let min_mean = 2.0 * REFERENCE_MERGE_RADIUS;
        if self.marking_spacing_mean.is_nan() || self.marking_spacing_mean <= min_mean {
            return Err(Error::invalid(format!(
                "marking spacing mean must exceed {min_mean} m"
            )));
        }
        if !(self.marking_spacing_jitter >= 0.0
            && self.marking_spacing_jitter <= self.marking_spacing_mean - min_mean)
        {
            return Err(Error::invalid(format!(
                "marking spacing jitter must lie in [0, {}]",
                self.marking_spacing_mean - min_mean
            )));
        }
        if !(0.0..length).contains(&self.marking_offset) {
            return Err(Error::invalid("marking offset must lie on the route"));
        }
        if self.label_alphabet.is_empty() {
            return Err(Error::invalid("label alphabet is empty"));
        }
        for seg in &self.loop_segments {
            let inside = |s: f64| (0.0..=length).contains(&s);
            if !(inside(seg.start)
                && inside(seg.end)
                && inside(seg.revisit_at)
                && seg.start < seg.end)
            {
                return Err(Error::invalid(format!(
                    "loop segment {seg:?} outside route of length {length:.1} m"
                )));
            }
        }
        if let Some(sep) = &self.separable {
            if sep.window < 2
                || sep.tolerance.is_nan()
                || sep.tolerance < 0.0
                || self.label_alphabet.len() < 2
            {
                return Err(Error::invalid(
                    "separability needs a window of at least 2, a tolerance >= 0 and 2+ labels",
                ));
            }
        }
        if !(self.frame_step > 0.0 && self.frame_dt > 0.0) {
            return Err(Error::invalid("frame step and frame dt must be positive"));
        }
        Ok(())
    }
}

/// Arc-length parameterized polyline.
#[derive(Clone, Debug)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    closed: bool,
}

impl Polyline {
    pub fn new(waypoints: &[[f64; 2]], closed: bool) -> Self {
        let mut points = waypoints.to_vec();
        if closed {
            points.push(waypoints[0]);
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Self {
            points,
            cumulative,
            closed,
        }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and heading (radians) at arc length `s`; closed routes wrap.
    pub fn at(&self, s: f64) -> ([f64; 2], f64) {
        let len = self.length();
        let s = if self.closed {
            s.rem_euclid(len)
        } else {
            s.clamp(0.0, len)
        };
        let seg = self
            .cumulative
            .partition_point(|&c| c <= s)
            .clamp(1, self.points.len() - 1)
            - 1;
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = if seg_len > 0.0 {
            (s - self.cumulative[seg]) / seg_len
        } else {
            0.0
        };
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        (p, (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Point offset `lateral` metres to the left of the route at `s`.
    pub fn offset_at(&self, s: f64, lateral: f64) -> ([f64; 2], f64) {
        let (p, yaw) = self.at(s);
        (
            [p[0] - lateral * yaw.sin(), p[1] + lateral * yaw.cos()],
            yaw,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueMarking {
    pub id: u64,
    pub label: MarkingLabel,
    pub lane: usize,
    /// Route arc length of the marking.
    pub arc: f64,
    pub position: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub frame: u64,
    /// Route arc length (before wrapping) of the vehicle.
    pub route_arc: f64,
    /// Vehicle ground position in the drive lane.
    pub position: [f64; 2],
    pub yaw: f64,
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub route: Polyline,
    pub markings: Vec<TrueMarking>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Nominal travel distance of the trajectory.
    pub drive_length: f64,
}

/// Windows of consecutive marking ids per lane, wrapping on closed routes.
fn lane_windows(
    markings: &[TrueMarking],
    lanes: usize,
    window: usize,
    closed: bool,
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for lane in 0..lanes {
        let ids: Vec<usize> = (0..markings.len())
            .filter(|&i| markings[i].lane == lane)
            .collect();
        let n = ids.len();
        if n < window {
            continue;
        }
        let starts = if closed { n } else { n - window + 1 };
        for start in 0..starts {
            out.push((0..window).map(|j| ids[(start + j) % n]).collect());
        }
    }
    out
}

/// Re-draws labels until no two distinct windows alias each other.
fn separate(
    markings: &mut [TrueMarking],
    spec: &WorldSpec,
    sep: &Separability,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    const MAX_ROUNDS: usize = 100_000;
    let windows = lane_windows(markings, spec.lanes, sep.window, spec.closed);
    let gaps: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| {
            w.windows(2)
                .map(|p| (markings[p[1]].position - markings[p[0]].position).norm())
                .collect()
        })
        .collect();
    for _ in 0..MAX_ROUNDS {
        let mut seen: HashMap<Vec<&MarkingLabel>, Vec<usize>> = HashMap::new();
        let mut conflict = None;
        'scan: for (wi, w) in windows.iter().enumerate() {
            let labels: Vec<&MarkingLabel> = w.iter().map(|&i| &markings[i].label).collect();
            let bucket = seen.entry(labels).or_default();
            for &other in bucket.iter() {
                let close = gaps[wi]
                    .iter()
                    .zip(&gaps[other])
                    .all(|(a, b)| (a - b).abs() <= sep.tolerance);
                if close && windows[other] != *w {
                    conflict = Some(w[w.len() - 1]);
                    break 'scan;
                }
            }
            bucket.push(wi);
        }
        let Some(id) = conflict else {
            return Ok(());
        };
        let alphabet = &spec.label_alphabet;
        let mut pick = rng.random_range(0..alphabet.len() - 1);
        if alphabet[pick] == markings[id].label {
            pick = alphabet.len() - 1;
        }
        markings[id].label = alphabet[pick].clone();
    }
    Err(Error::invalid(format!(
        "could not separate {}-marking windows at tolerance {} m",
        sep.window, sep.tolerance
    )))
}

/// Places markings along every lane and samples the vehicle trajectory.
/// Deterministic in `spec.seed`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let route = Polyline::new(&spec.route, spec.closed);
    let length = route.length();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let min_gap = spec.marking_spacing_mean - spec.marking_spacing_jitter;
    let mut markings = Vec::new();
    for lane in 0..spec.lanes {
        let lateral = lane as f64 * spec.lane_spacing;
        let mut s = spec.marking_offset;
        loop {
            let fits = if spec.closed {
                s < length && length - s + spec.marking_offset >= min_gap
            } else {
                s <= length
            };
            if !fits {
                break;
            }
            let label = spec.label_alphabet[rng.random_range(0..spec.label_alphabet.len())].clone();
            let (p, _) = route.offset_at(s, lateral);
            markings.push(TrueMarking {
                id: markings.len() as u64,
                label,
                lane,
                arc: s,
                position: Vector3::new(p[0], p[1], 0.0),
            });
            let jitter = if spec.marking_spacing_jitter > 0.0 {
                rng.random_range(-spec.marking_spacing_jitter..=spec.marking_spacing_jitter)
            } else {
                0.0
            };
            s += spec.marking_spacing_mean + jitter;
        }
    }

    if let Some(sep) = &spec.separable {
        separate(&mut markings, spec, sep, &mut rng)?;
    }

    let mut intervals = Vec::new();
    let mut segments = spec.loop_segments.clone();
    segments.sort_by(|a, b| a.revisit_at.total_cmp(&b.revisit_at));
    let mut cursor = 0.0;
    for seg in &segments {
        intervals.push((cursor, seg.revisit_at));
        intervals.push((seg.start, seg.end));
        cursor = seg.revisit_at;
    }
    intervals.push((cursor, length));
    intervals.retain(|(a, b)| b > a);

    let drive_lateral = spec.drive_lane as f64 * spec.lane_spacing;
    let mut trajectory = Vec::new();
    let last = intervals.len().saturating_sub(1);
    for (i, &(a, b)) in intervals.iter().enumerate() {
        let steps = ((b - a) / spec.frame_step).ceil() as u64;
        for j in 0..=steps {
            let s = a + j as f64 * spec.frame_step;
            let s = if s >= b {
                if i != last {
                    break;
                }
                b
            } else {
                s
            };
            let (p, yaw) = route.offset_at(s, drive_lateral);
            trajectory.push(TrajectoryPoint {
                frame: trajectory.len() as u64,
                route_arc: s,
                position: p,
                yaw,
            });
            if s >= b {
                break;
            }
        }
    }

    Ok(World {
        spec: spec.clone(),
        drive_length: intervals.iter().map(|(a, b)| b - a).sum(),
        route,
        markings,
        trajectory,
    })
}
