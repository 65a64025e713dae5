//! Simultaneous mapping and tracking for LiDAR scans.
//!
//! A front end detects and tracks moving objects by subtracting each scan
//! against the latest static map; a back end turns the resulting static
//! scans into occupancy-filtered submaps using a range-image visibility
//! check and merges them into the published map. Evaluation, a corridor
//! simulator, frontier-based direction selection and plain-text file
//! formats complete the crate.

pub mod error;
pub mod back_end;
pub mod eval;
pub mod front_end;
pub mod geometry;
pub mod io;
pub mod nav;
pub mod pipeline;
pub mod sim;
pub mod voxel_map;

pub use error::{Error, Result};
pub use geometry::{LabeledScan, Point3, PoseSE3, VoxelKey};
pub use voxel_map::VoxelMap;
