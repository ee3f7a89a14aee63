//! Synthetic driving sessions with ground truth.
//!
//! A [`World`] is a route with lanes of labelled road markings and a vehicle
//! trajectory that may re-drive parts of the route. [`simulate_drive`] turns it
//! into a [`SessionLog`](crate::session::SessionLog) with misses, label flips,
//! position noise and clutter, recording which true marking each detection
//! came from.

mod drive;
mod grid;
mod truth;
mod world;

pub use drive::{simulate_drive, NoiseSpec, SensorOutput, SensorSpec, SimulatedSession};
pub use truth::{ground_truth_pairs, ground_truth_pairs_within, TruthIndex};
pub use world::{
    default_alphabet, generate_world, LoopSegment, Polyline, Separability, TrajectoryPoint,
    TrueMarking, World, WorldSpec, REFERENCE_MERGE_RADIUS,
};
