//! Place recognition and loop-candidate detection from road markings.
//!
//! Detected road markings are lifted onto the road plane, deduplicated into
//! physical marking instances, chained per lane into sliding windows of `k`
//! consecutive markings, and matched by label identity plus consistency of
//! the distances between consecutive markings.
//!
//! Pipeline:
//!
//! 1. [`geometry`] back-projects detection centroids onto the ground plane.
//! 2. [`database`] merges observations, assigns lane tracks and grows sequences.
//! 3. [`matcher`] enumerates matching sequence pairs (brute force, incremental
//!    or signature-indexed).
//! 4. [`simulator`] and [`evaluation`] provide synthetic sessions, ground truth,
//!    k-sweeps and latency benchmarks.

pub mod config;
pub mod database;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod label;
pub mod matcher;
pub mod session;
pub mod simulator;

pub use config::{CameraRig, EngineConfig};
pub use database::{DatabaseSnapshot, MarkingInstance, MarkingSequence, SequenceDatabase};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CameraPose, Detection, GroundPlane, Observation3D, Ray};
pub use label::MarkingLabel;
pub use matcher::{MatchCandidate, MatchMode, MatchReport};
pub use session::{PoseRecord, SessionDetections, SessionLog};

/// Version string written into run manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema version of every file format read or written by the engine.
pub const SCHEMA_VERSION: u32 = 1;
