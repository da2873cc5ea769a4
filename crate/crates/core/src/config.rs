//! Run configuration shared by the command-line tool and the test suites.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, SourceGeometry, Vec3};
use crate::inversion::InverseOperator;
use crate::phantom::{shepp_logan_3d, shepp_logan_3d_original, BlobPhantom, Phantom};
use crate::presets::{default_inverse, Preset};
use crate::projector::Acquisition;
use crate::roi_iter::IterConfig;
use crate::volume::VoxelVolume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PhantomSpec {
    SheppLogan {
        #[serde(default)]
        original_contrast: bool,
        /// Radius of the phantom's unit ball as a fraction of the target ball.
        #[serde(default = "default_phantom_fraction")]
        radius_fraction: f64,
    },
    /// Ellipsoids relative to the unit ball.
    Ellipsoids {
        path: PathBuf,
        #[serde(default = "default_phantom_fraction")]
        radius_fraction: f64,
    },
    /// A centered Gaussian with width given as a fraction of the ball radius.
    Blob {
        #[serde(default = "default_sigma")]
        sigma_fraction: f64,
    },
    /// An existing raw volume with its sidecar.
    Volume { path: PathBuf },
}

fn default_sigma() -> f64 {
    0.2
}

/// The density occupies the cube inscribed in the target ball, the layout of
/// a cubic image whose circumscribed ball is the reconstruction target.
pub const CUBE_LAYOUT: f64 = 0.577_350_269_189_625_8;

fn default_phantom_fraction() -> f64 {
    CUBE_LAYOUT
}

/// How measured data are simulated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Project the voxelized phantom with the same sampler used inside the
    /// iteration.
    #[default]
    Voxel,
    /// Exact line integrals of the analytic phantom.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometrySpec {
    Preset(Preset),
    Explicit(SourceGeometry),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    /// Offset of the ROI center from the ball center.
    #[serde(default)]
    pub center: Vec3,
    /// Radius as a fraction of the ball radius.
    pub radius_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_voxel")]
    pub voxel_size: f64,
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    pub geometry: GeometrySpec,
    pub roi: RoiSpec,
    /// ROI radius fractions for sweeps.
    #[serde(default)]
    pub radii: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub inverse: Option<InverseOperator>,
    #[serde(default)]
    pub iter: IterConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_n() -> usize {
    64
}
fn default_voxel() -> f64 {
    1.0
}
fn default_supersample() -> usize {
    1
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::Config(format!("grid side must be at least 8, got {}", self.n)));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config("voxel size must be positive".into()));
        }
        let b = self.ball();
        let roi = self.roi_ball(self.roi.radius_fraction)?;
        if !b.contains_ball(&roi) {
            return Err(Error::Config("ROI is not contained in the target ball".into()));
        }
        if let PhantomSpec::Ellipsoids { path, .. } | PhantomSpec::Volume { path } = &self.phantom {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        if let PhantomSpec::SheppLogan { radius_fraction, .. } | PhantomSpec::Ellipsoids { radius_fraction, .. } =
            &self.phantom
        {
            if !(*radius_fraction > 0.0 && *radius_fraction <= 1.0) {
                return Err(Error::Config(format!("phantom radius fraction {radius_fraction} is outside (0, 1]")));
            }
        }
        self.iter.validate()?;
        Ok(())
    }

    /// The target ball: the grid's inscribed ball, centered at the origin.
    pub fn ball(&self) -> Ball {
        Ball { center: Vec3::ZERO, radius: 0.5 * self.n as f64 * self.voxel_size }
    }

    pub fn roi_ball(&self, fraction: f64) -> Result<Ball> {
        let b = self.ball();
        Ball::new(b.center + self.roi.center, fraction * b.radius)
    }

    pub fn acquisition(&self) -> Result<Acquisition> {
        match &self.geometry {
            GeometrySpec::Preset(p) => p.build(self.ball()),
            GeometrySpec::Explicit(g) => Ok(Acquisition::Cone(g.clone())),
        }
    }

    pub fn inverse_operator(&self, acq: &Acquisition) -> InverseOperator {
        self.inverse.clone().unwrap_or_else(|| default_inverse(acq, self.n, self.voxel_size))
    }

    /// Analytic phantom, for the ellipsoid variants.
    pub fn analytic_phantom(&self) -> Result<Option<Phantom>> {
        let b = self.ball();
        let unit = match &self.phantom {
            PhantomSpec::SheppLogan { original_contrast: false, radius_fraction } => {
                (shepp_logan_3d(), *radius_fraction)
            }
            PhantomSpec::SheppLogan { original_contrast: true, radius_fraction } => {
                (shepp_logan_3d_original(), *radius_fraction)
            }
            PhantomSpec::Ellipsoids { path, radius_fraction } => {
                let text = std::fs::read_to_string(path)?;
                (serde_json::from_str::<Phantom>(&text)?, *radius_fraction)
            }
            _ => return Ok(None),
        };
        Ok(Some(unit.0.scaled(unit.1 * b.radius)?.with_support(b)?))
    }

    /// Ground-truth volume on the configured grid.
    pub fn volume(&self) -> Result<VoxelVolume> {
        let b = self.ball();
        match &self.phantom {
            PhantomSpec::Blob { sigma_fraction } => {
                BlobPhantom::single(b.center, sigma_fraction * b.radius, 1.0).voxelize(self.n, self.voxel_size)
            }
            PhantomSpec::Volume { path } => {
                let v = VoxelVolume::read_raw(path)?;
                if v.n() != self.n || (v.voxel_size() - self.voxel_size).abs() > 1e-12 {
                    return Err(Error::Config("volume grid disagrees with the run configuration".into()));
                }
                Ok(v)
            }
            _ => {
                let p = self.analytic_phantom()?.expect("ellipsoid phantom");
                p.voxelize(self.n, self.voxel_size, self.supersample)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_json(
            r#"{"phantom": {"type": "shepp_logan"},
                "geometry": {"preset": {"kind": "circle", "positions": 90}},
                "roi": {"radius_fraction": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.ball().radius, 32.0);
        assert!(cfg.acquisition().is_ok());
        let bad = r#"{"phantom": {"type": "shepp_logan"},
                "geometry": {"preset": {"kind": "circle"}},
                "roi": {"radius_fraction": 1.5}}"#;
        assert!(RunConfig::from_json(bad).is_err());
    }
}
