//! Engine configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! schema_version = 1
//! k = 4
//! epsilon = 1.0
//! fx = 500
//! plane_normal = 0,0,1
//! ```
//!
//! Camera keys (`fx fy cx cy width height`) are optional as a group; when
//! present they describe the rig used to localize pixel detections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, GroundPlane};
use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Search window size: number of markings per sequence.
    pub k: usize,
    /// Per-gap absolute tolerance (m).
    pub epsilon: f64,
    /// Radius within which a same-label observation merges into an instance (m).
    pub merge_radius: f64,
    /// Lateral distance within which an instance joins an existing track (m).
    pub lane_width: f64,
    pub min_separation_frames: u64,
    pub min_separation_distance: f64,
    /// Frames an instance may go unobserved and still absorb observations.
    pub merge_window_frames: u64,
    /// Instances observed fewer times are discarded as spurious.
    pub min_observations: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 4,
            epsilon: 1.0,
            merge_radius: 1.5,
            lane_width: 2.0,
            min_separation_frames: 200,
            min_separation_distance: 100.0,
            merge_window_frames: 5,
            min_observations: 3,
        }
    }
}

impl EngineConfig {
    pub fn with_k(&self, k: usize) -> Self {
        Self { k, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k must be >= 2, got {}", self.k)));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("merge_radius", self.merge_radius),
            ("lane_width", self.lane_width),
            ("min_separation_distance", self.min_separation_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_separation_frames == 0 {
            return Err(Error::invalid("min_separation_frames must be positive"));
        }
        if self.min_observations == 0 {
            return Err(Error::invalid("min_observations must be positive"));
        }
        Ok(())
    }
}

/// Camera intrinsics plus the road plane they are localized against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub plane: GroundPlane,
}

/// Everything a config file can carry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub engine: EngineConfig,
    pub intrinsics: Option<CameraIntrinsics>,
    pub plane: GroundPlane,
}

impl ConfigFile {
    pub fn rig(&self) -> Option<CameraRig> {
        self.intrinsics.map(|intrinsics| CameraRig {
            intrinsics,
            plane: self.plane,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let bad = |line: usize, message: String| Error::MalformedRecord {
            path: origin.to_string(),
            line,
            message,
        };

        let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad(line_no, format!("expected key = value, got {line:?}")));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(bad(line_no, format!("unknown key {key:?}")));
            }
            if values
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(bad(line_no, format!("duplicate key {key:?}")));
            }
        }

        fn num<T: std::str::FromStr>(
            values: &BTreeMap<String, (usize, String)>,
            key: &str,
            bad: &dyn Fn(usize, String) -> Error,
        ) -> Result<Option<T>> {
            match values.get(key) {
                None => Ok(None),
                Some((line, v)) => v
                    .parse::<T>()
                    .map(Some)
                    .map_err(|_| bad(*line, format!("cannot parse {key} = {v:?}"))),
            }
        }

        if let Some(found) = num::<u32>(&values, "schema_version", &bad)? {
            if found != SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    expected: SCHEMA_VERSION,
                    found,
                });
            }
        }

        let d = EngineConfig::default();
        let engine = EngineConfig {
            k: num(&values, "k", &bad)?.unwrap_or(d.k),
            epsilon: num(&values, "epsilon", &bad)?.unwrap_or(d.epsilon),
            merge_radius: num(&values, "merge_radius", &bad)?.unwrap_or(d.merge_radius),
            lane_width: num(&values, "lane_width", &bad)?.unwrap_or(d.lane_width),
            min_separation_frames: num(&values, "min_separation_frames", &bad)?
                .unwrap_or(d.min_separation_frames),
            min_separation_distance: num(&values, "min_separation_distance", &bad)?
                .unwrap_or(d.min_separation_distance),
            merge_window_frames: num(&values, "merge_window_frames", &bad)?
                .unwrap_or(d.merge_window_frames),
            min_observations: num(&values, "min_observations", &bad)?.unwrap_or(d.min_observations),
        };
        engine.validate()?;

        let camera_keys = ["fx", "fy", "cx", "cy", "width", "height"];
        let present = camera_keys
            .iter()
            .filter(|k| values.contains_key(**k))
            .count();
        let intrinsics = match present {
            0 => None,
            6 => Some(CameraIntrinsics::new(
                num(&values, "fx", &bad)?.unwrap(),
                num(&values, "fy", &bad)?.unwrap(),
                num(&values, "cx", &bad)?.unwrap(),
                num(&values, "cy", &bad)?.unwrap(),
                num(&values, "width", &bad)?.unwrap(),
                num(&values, "height", &bad)?.unwrap(),
            )?),
            _ => {
                return Err(Error::invalid(format!(
                    "{origin}: camera keys must be given together: {}",
                    camera_keys.join(", ")
                )))
            }
        };

        let normal = match values.get("plane_normal") {
            None => Vector3::z(),
            Some((line, v)) => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| p.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(*line, format!("cannot parse plane_normal = {v:?}")))?;
                if parts.len() != 3 {
                    return Err(bad(*line, "plane_normal needs 3 components".into()));
                }
                Vector3::new(parts[0], parts[1], parts[2])
            }
        };
        let plane = GroundPlane::new(normal, num(&values, "plane_offset", &bad)?.unwrap_or(0.0))?;

        Ok(Self {
            engine,
            intrinsics,
            plane,
        })
    }

    /// Serializes every key in a fixed order; `parse(render())` is lossless.
    pub fn render(&self) -> String {
        let e = &self.engine;
        let mut out = String::new();
        let _ = writeln!(out, "schema_version = {SCHEMA_VERSION}");
        let _ = writeln!(out, "k = {}", e.k);
        let _ = writeln!(out, "epsilon = {:?}", e.epsilon);
        let _ = writeln!(out, "merge_radius = {:?}", e.merge_radius);
        let _ = writeln!(out, "lane_width = {:?}", e.lane_width);
        let _ = writeln!(out, "min_separation_frames = {}", e.min_separation_frames);
        let _ = writeln!(
            out,
            "min_separation_distance = {:?}",
            e.min_separation_distance
        );
        let _ = writeln!(out, "merge_window_frames = {}", e.merge_window_frames);
        let _ = writeln!(out, "min_observations = {}", e.min_observations);
        if let Some(i) = &self.intrinsics {
            let _ = writeln!(out, "fx = {:?}", i.fx);
            let _ = writeln!(out, "fy = {:?}", i.fy);
            let _ = writeln!(out, "cx = {:?}", i.cx);
            let _ = writeln!(out, "cy = {:?}", i.cy);
            let _ = writeln!(out, "width = {}", i.width);
            let _ = writeln!(out, "height = {}", i.height);
        }
        let n = self.plane.normal;
        let _ = writeln!(out, "plane_normal = {:?},{:?},{:?}", n.x, n.y, n.z);
        let _ = writeln!(out, "plane_offset = {:?}", self.plane.offset);
        out
    }
}

const KNOWN_KEYS: &[&str] = &[
    "schema_version",
    "k",
    "epsilon",
    "merge_radius",
    "lane_width",
    "min_separation_frames",
    "min_separation_distance",
    "merge_window_frames",
    "min_observations",
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "plane_normal",
    "plane_offset",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_empty() {
        let cfg = ConfigFile::parse("# nothing\n\n", "mem").unwrap();
        assert_eq!(cfg.engine, EngineConfig::default());
        assert!(cfg.intrinsics.is_none());
        assert_eq!(cfg.plane, GroundPlane::default());
    }

    #[test]
    fn render_parse_roundtrip() {
        let cfg = ConfigFile {
            engine: EngineConfig {
                k: 6,
                epsilon: 0.35,
                ..EngineConfig::default()
            },
            intrinsics: Some(CameraIntrinsics::new(500.0, 510.5, 640.0, 256.0, 1280, 512).unwrap()),
            plane: GroundPlane::new(Vector3::new(0.0, 0.6, 0.8), -0.25).unwrap(),
        };
        let text = cfg.render();
        let back = ConfigFile::parse(&text, "mem").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ConfigFile::parse("k = 4\nepsilon = abc\n", "cfg").unwrap_err();
        assert!(
            matches!(err, Error::MalformedRecord { line: 2, .. }),
            "{err}"
        );
        let err = ConfigFile::parse("k = 4\nbogus = 1\n", "cfg").unwrap_err();
        assert!(
            matches!(err, Error::MalformedRecord { line: 2, .. }),
            "{err}"
        );
        let err = ConfigFile::parse("just text\n", "cfg").unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            ConfigFile::parse("schema_version = 2\n", "cfg"),
            Err(Error::SchemaVersion {
                expected: 1,
                found: 2
            })
        ));
        assert!(ConfigFile::parse("k = 1\n", "cfg").is_err());
        assert!(ConfigFile::parse("epsilon = -1\n", "cfg").is_err());
        assert!(ConfigFile::parse("fx = 500\n", "cfg").is_err());
    }
}
