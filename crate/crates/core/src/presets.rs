//! Desk-scale acquisition setups. Distances scale with the target ball
//! radius so the same presets work at any grid size.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Ball, Detector, SourceGeometry, SourceKind, Vec3};
use crate::inversion::{GridSpec, InverseKind, InverseOperator, ParallelMethod};
use crate::projector::{Acquisition, ParallelGrid};

/// Reference ball radius against which preset distances are expressed.
pub const REFERENCE_RADIUS: f64 = 221.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preset {
    Sphere {
        #[serde(default = "default_polar_step")]
        polar_step_deg: f64,
        #[serde(default = "default_azimuth_step")]
        azimuth_step_deg: f64,
        #[serde(default = "default_iso")]
        iso_spacing: f64,
    },
    Circle {
        #[serde(default = "default_positions")]
        positions: usize,
        #[serde(default = "default_iso")]
        iso_spacing: f64,
    },
    TwinCircles {
        #[serde(default = "default_per_circle")]
        per_circle: usize,
        #[serde(default = "default_iso")]
        iso_spacing: f64,
    },
    Helix {
        #[serde(default = "default_turns")]
        turns: usize,
        #[serde(default = "default_per_turn")]
        per_turn: usize,
        #[serde(default = "default_iso")]
        iso_spacing: f64,
    },
    Parallel {
        #[serde(default = "default_directions")]
        directions: usize,
        #[serde(default = "default_du")]
        du: f64,
    },
}

// angular sampling coarsens with the grid: 3 x 5 degrees at n = 256
fn default_polar_step() -> f64 {
    12.0
}
fn default_azimuth_step() -> f64 {
    12.0
}
fn default_iso() -> f64 {
    1.0
}
fn default_positions() -> usize {
    360
}
fn default_per_circle() -> usize {
    360
}
fn default_turns() -> usize {
    8
}
fn default_per_turn() -> usize {
    128
}
fn default_directions() -> usize {
    2000
}
fn default_du() -> f64 {
    1.0
}

impl Preset {
    pub fn sphere() -> Preset {
        Preset::Sphere {
            polar_step_deg: default_polar_step(),
            azimuth_step_deg: default_azimuth_step(),
            iso_spacing: default_iso(),
        }
    }

    pub fn circle() -> Preset {
        Preset::Circle { positions: default_positions(), iso_spacing: default_iso() }
    }

    pub fn twin_circles() -> Preset {
        Preset::TwinCircles { per_circle: default_per_circle(), iso_spacing: default_iso() }
    }

    pub fn helix() -> Preset {
        Preset::Helix { turns: default_turns(), per_turn: default_per_turn(), iso_spacing: default_iso() }
    }

    /// Builds the acquisition around `ball`.
    pub fn build(&self, ball: Ball) -> Result<Acquisition> {
        let scale = ball.radius / REFERENCE_RADIUS;
        let cone = |kind: SourceKind, dist: f64, sdd: f64, iso: f64| -> Result<Acquisition> {
            let det = Detector::covering(&ball, dist, sdd, iso);
            Ok(Acquisition::Cone(SourceGeometry::new(kind, ball, det)?))
        };
        match *self {
            Preset::Sphere { polar_step_deg, azimuth_step_deg, iso_spacing } => {
                let radius = 400.0 * scale;
                cone(
                    SourceKind::Sphere { radius, polar_step_deg, azimuth_step_deg },
                    radius,
                    2.25 * radius,
                    iso_spacing,
                )
            }
            Preset::Circle { positions, iso_spacing } => {
                let radius = 1472.0 * scale;
                cone(SourceKind::Circle { radius, normal: Vec3::Z, positions }, radius, radius, iso_spacing)
            }
            Preset::TwinCircles { per_circle, iso_spacing } => {
                let radius = 1472.0 * scale;
                cone(SourceKind::TwinCircles { radius, per_circle }, radius, radius, iso_spacing)
            }
            Preset::Helix { turns, per_turn, iso_spacing } => {
                let radius = 384.0 * scale;
                // the helix spans twice the ball diameter along its axis
                let pitch = 4.0 * ball.radius / turns as f64;
                cone(SourceKind::Helix { radius, pitch, turns, per_turn }, radius, 2.0 * radius, iso_spacing)
            }
            Preset::Parallel { directions, du } => {
                Ok(Acquisition::Parallel(ParallelGrid::covering(ball, directions, du)?))
            }
        }
    }
}

/// The default inverse for an acquisition on an `n`-grid.
pub fn default_inverse(acq: &Acquisition, n: usize, voxel_size: f64) -> InverseOperator {
    let mut op = InverseOperator::new(InverseKind::default_for(acq), GridSpec { n, voxel_size });
    if op.kind == InverseKind::SphericalRebin {
        op.fourier.method = ParallelMethod::Filtered;
        // offsets at half a voxel matter far more than direction count here
        op.rebin.directions = 500;
        op.rebin.du_fraction = 0.5;
    }
    op
}
