//! Inverse operators `Z` for untruncated data.
//!
//! Every operator maps a [`ProjectionSet`] to a [`VoxelVolume`] on a grid
//! centered at the target ball, is linear in the data, and returns exactly
//! zero outside the ball.

mod fdk;
mod fourier_slice;
mod grangeat;
mod rebin;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, SourceKind, Vec3};
use crate::projector::{Acquisition, ProjectionSet};
use crate::volume::VoxelVolume;

pub use fdk::fdk;
pub use fourier_slice::{fourier_slice_inverse, parallel_fbp, slice_spectrum, SliceSpectrum};
pub use grangeat::{grangeat_intermediate, grangeat_inverse, GrangeatIntermediate};
pub use rebin::{rebin_to_parallel, spherical_inverse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseKind {
    FourierSlice,
    Fdk,
    Grangeat,
    SphericalRebin,
}

impl InverseKind {
    /// The natural inverse for an acquisition.
    pub fn default_for(acq: &Acquisition) -> InverseKind {
        match acq {
            Acquisition::Parallel(_) => InverseKind::FourierSlice,
            Acquisition::Cone(g) => match g.kind() {
                SourceKind::Sphere { .. } => InverseKind::SphericalRebin,
                SourceKind::Circle { .. } => InverseKind::Fdk,
                SourceKind::Helix { .. } | SourceKind::TwinCircles { .. } => InverseKind::Grangeat,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampWindow {
    RamLak,
    Hamming,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSettings {
    pub window: RampWindow,
    /// Fraction of the Nyquist frequency where the cosine roll-off begins.
    pub cutoff: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings { window: RampWindow::RamLak, cutoff: 0.9 }
    }
}

impl FilterSettings {
    /// Multiplicative window at `|omega| / nyquist = r`.
    pub fn response(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= 1.0 {
            return 0.0;
        }
        let taper = if r <= self.cutoff || self.cutoff >= 1.0 {
            1.0
        } else {
            let x = (r - self.cutoff) / (1.0 - self.cutoff);
            0.5 * (1.0 + (std::f64::consts::PI * x).cos())
        };
        let window = match self.window {
            RampWindow::RamLak => 1.0,
            RampWindow::Hamming => 0.54 + 0.46 * (std::f64::consts::PI * r).cos(),
        };
        taper * window
    }
}

/// Output grid: `n^3` voxels of side `voxel_size`, centered on the target ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn zeros(&self, ball: &Ball) -> Result<VoxelVolume> {
        let half = 0.5 * self.n as f64 * self.voxel_size;
        VoxelVolume::new(
            self.n,
            self.voxel_size,
            ball.center - Vec3::new(half, half, half),
            vec![0.0; self.n.pow(3)],
        )
    }
}

/// How parallel data are inverted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelMethod {
    /// Slice spectra regridded onto a Cartesian frequency grid.
    Gridding,
    /// Two-dimensional ramp filter followed by backprojection.
    Filtered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourierOptions {
    pub method: ParallelMethod,
    /// Half-thickness of the slab around each slice, in frequency cells.
    pub slab_halfwidth: f64,
    /// Frequency grid size as a multiple of the output grid side.
    pub oversampling: usize,
}

impl Default for FourierOptions {
    fn default() -> Self {
        FourierOptions { method: ParallelMethod::Gridding, slab_halfwidth: 1.5, oversampling: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RebinOptions {
    pub directions: usize,
    /// Offset spacing as a fraction of the output voxel size.
    pub du_fraction: f64,
}

impl Default for RebinOptions {
    fn default() -> Self {
        RebinOptions { directions: 2000, du_fraction: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrangeatOptions {
    /// Plane normals over the hemisphere.
    pub directions: usize,
    /// Radon offset step as a fraction of the output voxel size.
    pub rho_step: f64,
    /// In-plane angular samples across the ball per source.
    pub arc_samples: usize,
    pub tuy_tolerance: f64,
    pub tuy_points: usize,
    pub tuy_directions: usize,
}

impl Default for GrangeatOptions {
    fn default() -> Self {
        GrangeatOptions {
            directions: 2000,
            rho_step: 0.5,
            arc_samples: 96,
            tuy_tolerance: 1e-3,
            tuy_points: 64,
            tuy_directions: 256,
        }
    }
}

/// A configured inverse `Z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseOperator {
    pub kind: InverseKind,
    pub grid: GridSpec,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub fourier: FourierOptions,
    #[serde(default)]
    pub rebin: RebinOptions,
    #[serde(default)]
    pub grangeat: GrangeatOptions,
}

impl InverseOperator {
    pub fn new(kind: InverseKind, grid: GridSpec) -> InverseOperator {
        InverseOperator {
            kind,
            grid,
            filter: FilterSettings::default(),
            fourier: FourierOptions::default(),
            rebin: RebinOptions::default(),
            grangeat: GrangeatOptions::default(),
        }
    }

    pub fn check_compatible(&self, acq: &Acquisition) -> Result<()> {
        let ok = match (self.kind, acq) {
            (InverseKind::FourierSlice, Acquisition::Parallel(_)) => true,
            (InverseKind::Fdk, Acquisition::Cone(g)) => matches!(g.kind(), SourceKind::Circle { .. }),
            (InverseKind::Grangeat, Acquisition::Cone(g)) => g.kind().is_curve(),
            (InverseKind::SphericalRebin, Acquisition::Cone(g)) => {
                matches!(g.kind(), SourceKind::Sphere { .. })
            }
            _ => false,
        };
        if !ok {
            return Err(Error::Inversion(format!(
                "{:?} cannot invert {} data",
                self.kind,
                match acq {
                    Acquisition::Parallel(_) => "parallel",
                    Acquisition::Cone(g) => g.kind().name(),
                }
            )));
        }
        if self.grid.n < 8 || !(self.grid.voxel_size > 0.0) {
            return Err(Error::Inversion("output grid must have n >= 8 and positive voxels".into()));
        }
        Ok(())
    }

    /// Applies `Z` to the data.
    pub fn apply(&self, p: &ProjectionSet) -> Result<VoxelVolume> {
        self.check_compatible(p.acquisition())?;
        match self.kind {
            InverseKind::FourierSlice => match self.fourier.method {
                ParallelMethod::Gridding => fourier_slice_inverse(p, self),
                ParallelMethod::Filtered => parallel_fbp(p, self),
            },
            InverseKind::Fdk => fdk(p, self),
            InverseKind::Grangeat => grangeat_inverse(p, self),
            InverseKind::SphericalRebin => spherical_inverse(p, self),
        }
    }
}

/// Catmull-Rom weights for fractional offset `t` in `[0, 1)`, taps at
/// `-1, 0, 1, 2`.
pub(crate) fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Bilinear lookup in a `rows x cols` image at fractional (row, col);
/// zero outside.
pub(crate) fn bilinear(img: &[f64], rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    if !(r > -1.0 && c > -1.0 && r < rows as f64 && c < cols as f64) {
        return 0.0;
    }
    let r0 = r.floor();
    let c0 = c.floor();
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= rows as isize || j >= cols as isize {
            0.0
        } else {
            img[i as usize * cols + j as usize]
        }
    };
    (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}
