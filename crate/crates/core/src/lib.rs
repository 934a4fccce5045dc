//! Deterministic 3D multi-agent flocking simulator.
//!
//! Agents sense a world of analytic primitives with a synthetic depth
//! camera, keep a sliding voxel map, plan a waypoint with A*, and steer with
//! a potential-field law built from neighbor, goal and obstacle terms.

pub mod bench;
pub mod experiment;
pub mod geometry;
pub mod mapping;
pub mod metrics;
pub mod navigation;
pub mod perception;
pub mod plot;
pub mod sim;
pub mod world;

pub use geometry::{Aabb, Primitive, Segment, Vec3};
