//! Semantics-guided LiDAR voxel masking toolkit.
//!
//! The crate covers the full desk-scale loop around masked-autoencoder
//! pretraining for LiDAR: scan ingestion and synthetic scenes
//! ([`pointcloud`]), sparse voxelization with per-class occupancy
//! ([`voxel`]), masking policies at a fixed overall ratio ([`masking`]),
//! voxel-level reconstruction metrics and class-importance ranking
//! ([`metrics`]), the composite reconstruction loss with an auxiliary
//! point-wise semantic head ([`losses`], [`head`]), and a tiny trainable
//! voxel autoencoder that makes the whole pipeline executable end to end
//! ([`toy`]).
//!
//! Everything randomized is seeded explicitly; see [`rng`] for the
//! generator and stream-splitting scheme.

// Fixed-dimension axis loops read better than iterator chains here.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod head;
pub mod kdtree;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod pointcloud;
pub mod rng;
pub mod toy;
pub mod voxel;

pub use pointcloud::{ClassId, PointCloud};
pub use voxel::{voxelize, VoxelGrid, VoxelGridConfig, VoxelIndex};
