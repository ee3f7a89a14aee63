use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::CameraRig;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, Detection, GroundPlane, Observation3D};
use crate::label::MarkingLabel;
use crate::session::{PoseRecord, SessionDetections, SessionLog};

use super::grid::PointGrid;
use super::world::World;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Isotropic ground-plane noise per observation (m).
    pub position_sigma: f64,
    pub miss_prob: f64,
    pub label_flip_prob: f64,
    /// Mean number of spurious detections per frame.
    pub clutter_rate: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            position_sigma: 0.0,
            miss_prob: 0.0,
            label_flip_prob: 0.0,
            clutter_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("miss_prob", self.miss_prob),
            ("label_flip_prob", self.label_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if !(self.position_sigma >= 0.0 && self.position_sigma.is_finite()) {
            return Err(Error::invalid("position_sigma must be >= 0"));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(Error::invalid("clutter_rate must be >= 0"));
        }
        Ok(())
    }
}

/// How detections are reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SensorOutput {
    /// Image centroids, localized by the engine.
    Pixel(CameraIntrinsics),
    /// Ground points handed straight to the database.
    Ground,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub output: SensorOutput,
    pub mount_height: f64,
    /// Optical axis tilt below the horizon (radians).
    pub pitch_down: f64,
    pub plane: GroundPlane,
    /// Visible ground band ahead of the camera (m).
    pub min_range: f64,
    pub max_range: f64,
    /// Half width of the visible band, in lanes.
    pub lateral_lanes: f64,
}

impl SensorSpec {
    /// Forward camera, 1280x512 px, 1.5 m above the road, 10 degrees down.
    pub fn pixel_default() -> Self {
        Self {
            output: SensorOutput::Pixel(
                CameraIntrinsics::new(500.0, 500.0, 640.0, 256.0, 1280, 512).expect("static"),
            ),
            ..Self::ground_default()
        }
    }

    pub fn ground_default() -> Self {
        Self {
            output: SensorOutput::Ground,
            mount_height: 1.5,
            pitch_down: 10f64.to_radians(),
            plane: GroundPlane::default(),
            min_range: 4.0,
            max_range: 25.0,
            lateral_lanes: 1.5,
        }
    }

    pub fn rig(&self) -> Option<CameraRig> {
        match self.output {
            SensorOutput::Pixel(intrinsics) => Some(CameraRig {
                intrinsics,
                plane: self.plane,
            }),
            SensorOutput::Ground => None,
        }
    }
}

/// Simulator output: the drive as the engine sees it plus what really happened.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedSession {
    pub log: SessionLog,
    /// True marking id per detection, `None` for clutter.
    pub truth_links: Vec<Option<u64>>,
    /// Markings inside the visible band per frame.
    pub visibility: Vec<(u64, Vec<u64>)>,
}

/// Drives the world's trajectory and emits noisy detections. Deterministic in
/// `(world.spec.seed, session_seed)`.
pub fn simulate_drive(
    world: &World,
    noise: &NoiseSpec,
    sensor: &SensorSpec,
    session_seed: u64,
) -> Result<SimulatedSession> {
    noise.validate()?;
    if sensor.plane != GroundPlane::default() {
        return Err(Error::invalid(
            "the simulator places markings on z = 0; the sensor plane must match",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(
        world.spec.seed
            ^ session_seed
                .wrapping_add(1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let position_noise =
        Normal::new(0.0, noise.position_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let clutter = if noise.clutter_rate > 0.0 {
        Some(Poisson::new(noise.clutter_rate).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let grid = PointGrid::new(
        32.0,
        world.markings.iter().map(|m| [m.position.x, m.position.y]),
    );
    let half_width = sensor.lateral_lanes * world.spec.lane_spacing;
    let mid = 0.5 * (sensor.min_range + sensor.max_range);
    let reach = (0.5 * (sensor.max_range - sensor.min_range)).hypot(half_width) + 1e-6;
    let alphabet = &world.spec.label_alphabet;

    let mut poses = Vec::with_capacity(world.trajectory.len());
    let mut pixel = Vec::new();
    let mut ground = Vec::new();
    let mut truth_links = Vec::new();
    let mut visibility = Vec::new();

    for tp in &world.trajectory {
        let (sy, cy) = tp.yaw.sin_cos();
        let forward = [cy, sy];
        let left = [-sy, cy];
        let cam_position = Vector3::new(tp.position[0], tp.position[1], sensor.mount_height);
        let pose = CameraPose::forward_facing(cam_position, tp.yaw, sensor.pitch_down);
        let timestamp = tp.frame as f64 * world.spec.frame_dt;
        poses.push(PoseRecord {
            frame: tp.frame,
            timestamp,
            pose,
        });

        let center = [tp.position[0] + mid * cy, tp.position[1] + mid * sy];
        let mut visible = Vec::new();
        for idx in grid.within(center, reach) {
            let m = &world.markings[idx];
            let d = [m.position.x - tp.position[0], m.position.y - tp.position[1]];
            let along = d[0] * forward[0] + d[1] * forward[1];
            let across = d[0] * left[0] + d[1] * left[1];
            if along < sensor.min_range || along > sensor.max_range || across.abs() > half_width {
                continue;
            }
            if let SensorOutput::Pixel(intr) = &sensor.output {
                if intr.project(&pose.world_to_camera(&m.position)).is_none() {
                    continue;
                }
            }
            visible.push(m.id);
        }
        visibility.push((tp.frame, visible.clone()));

        let mut emit = |label: &MarkingLabel, position: Vector3<f64>, link: Option<u64>| {
            match &sensor.output {
                SensorOutput::Pixel(intr) => {
                    let Some((u, v)) = intr.project(&pose.world_to_camera(&position)) else {
                        return;
                    };
                    pixel.push(Detection {
                        frame_id: tp.frame,
                        timestamp,
                        label: label.clone(),
                        centroid: (u, v),
                    });
                }
                SensorOutput::Ground => ground.push(Observation3D {
                    frame_id: tp.frame,
                    label: label.clone(),
                    position,
                }),
            }
            truth_links.push(link);
        };

        for id in visible {
            let m = &world.markings[id as usize];
            if rng.random_bool(noise.miss_prob) {
                continue;
            }
            let label = if alphabet.len() > 1 && rng.random_bool(noise.label_flip_prob) {
                let mut other = rng.random_range(0..alphabet.len() - 1);
                if alphabet[other] == m.label {
                    other = alphabet.len() - 1;
                }
                alphabet[other].clone()
            } else {
                m.label.clone()
            };
            let jitter = Vector3::new(
                position_noise.sample(&mut rng),
                position_noise.sample(&mut rng),
                0.0,
            );
            emit(&label, m.position + jitter, Some(m.id));
        }

        if let Some(dist) = &clutter {
            let count = dist.sample(&mut rng) as u64;
            for _ in 0..count {
                let along = rng.random_range(sensor.min_range..=sensor.max_range);
                let across = rng.random_range(-half_width..=half_width);
                let label = alphabet[rng.random_range(0..alphabet.len())].clone();
                let position = Vector3::new(
                    tp.position[0] + along * forward[0] + across * left[0],
                    tp.position[1] + along * forward[1] + across * left[1],
                    0.0,
                );
                emit(&label, position, None);
            }
        }
    }

    let detections = match sensor.output {
        SensorOutput::Pixel(_) => SessionDetections::Pixel(pixel),
        SensorOutput::Ground => SessionDetections::Ground(ground),
    };
    Ok(SimulatedSession {
        log: SessionLog {
            poses,
            detections,
            rig: sensor.rig(),
        },
        truth_links,
        visibility,
    })
}
