//! Cone-beam and parallel-ray tomography with region-of-interest
//! reconstruction by a regularized fixed-point iteration.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: source loci, rays, balls, Tuy checks, ray-set volumes.
//! * [`phantom`] and [`volume`]: analytic phantoms and voxel grids.
//! * [`projector`]: forward operators and ROI truncation.
//! * [`inversion`]: inverse operators for untruncated data.
//! * [`regularize`]: detector-space mollifier and wavelet shrinkage.
//! * [`roi_iter`]: the ROI iteration, contraction estimates, sweeps.

pub mod config;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod inversion;
pub mod phantom;
pub mod presets;
pub mod projector;
pub mod regularize;
pub mod roi_iter;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{
    cap_area, cap_cos, ray_hits_ball, truncated_ray_volume, tuy_check, Ball, Detector, Ray,
    SourceGeometry, SourceKind, TuyReport, Vec3,
};
pub use inversion::{InverseKind, InverseOperator};
pub use phantom::{shepp_logan_3d, BlobPhantom, Ellipsoid, GaussianBlob, LineIntegrals, Phantom};
pub use projector::{Acquisition, ParallelGrid, ProjectionSet};
pub use regularize::{MollifierKernel, WaveletConfig};
pub use roi_iter::{IterConfig, ReconReport, StoppingMode};
pub use volume::VoxelVolume;
