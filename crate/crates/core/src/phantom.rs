//! Analytic phantoms with exact line integrals.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Ray, Vec3};
use crate::volume::VoxelVolume;

/// Anything whose integrals over half-rays and full lines can be evaluated.
pub trait LineIntegrals: Sync {
    /// Integral over `{source + t dir : t >= 0}`.
    fn half_ray(&self, ray: &Ray) -> f64;
    /// Integral over the whole line through `ray`.
    fn full_line(&self, ray: &Ray) -> f64;
    /// Ball carrying the support, when compact.
    fn support(&self) -> Option<Ball> {
        None
    }
}

/// Solid ellipsoid adding `density` inside. Euler angles follow the z-x-z
/// convention, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec3,
    pub semi_axes: [f64; 3],
    #[serde(default)]
    pub euler_deg: [f64; 3],
    pub density: f64,
}

impl Ellipsoid {
    /// Rows are the ellipsoid axes expressed in world coordinates.
    fn rotation(&self) -> [Vec3; 3] {
        let [phi, theta, psi] = self.euler_deg.map(f64::to_radians);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (ss, cs) = psi.sin_cos();
        [
            Vec3::new(cs * cp - ct * sp * ss, cs * sp + ct * cp * ss, ss * st),
            Vec3::new(-ss * cp - ct * sp * cs, -ss * sp + ct * cp * cs, cs * st),
            Vec3::new(st * sp, -st * cp, ct),
        ]
    }

    fn local(&self, rot: &[Vec3; 3], v: Vec3) -> Vec3 {
        Vec3::new(
            rot[0].dot(v) / self.semi_axes[0],
            rot[1].dot(v) / self.semi_axes[1],
            rot[2].dot(v) / self.semi_axes[2],
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let rot = self.rotation();
        self.local(&rot, p - self.center).norm2() <= 1.0
    }

    /// Parameter interval of the line through `ray` inside the ellipsoid.
    pub fn chord(&self, ray: &Ray) -> Option<(f64, f64)> {
        let rot = self.rotation();
        let q0 = self.local(&rot, ray.source - self.center);
        let q1 = self.local(&rot, ray.direction);
        let a = q1.norm2();
        let b = q0.dot(q1);
        let c = q0.norm2() - 1.0;
        let disc = b * b - a * c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some(((-b - s) / a, (-b + s) / a))
    }

    fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Phantom(format!("semi-axes must be positive, got {:?}", self.semi_axes)));
        }
        if !self.center.is_finite() || !self.density.is_finite() {
            return Err(Error::Phantom("non-finite ellipsoid parameters".into()));
        }
        Ok(())
    }

    /// Farthest distance of the ellipsoid from `p` (upper bound).
    fn reach_from(&self, p: Vec3) -> f64 {
        (self.center - p).norm() + self.semi_axes.iter().cloned().fold(0.0, f64::max)
    }
}

/// Sum of ellipsoids supported in a ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhantom", into = "RawPhantom")]
pub struct Phantom {
    ellipsoids: Vec<Ellipsoid>,
    support_ball: Ball,
}

#[derive(Serialize, Deserialize)]
struct RawPhantom {
    ellipsoids: Vec<Ellipsoid>,
    support_ball: Ball,
}

impl TryFrom<RawPhantom> for Phantom {
    type Error = Error;
    fn try_from(raw: RawPhantom) -> Result<Self> {
        Phantom::new(raw.ellipsoids, raw.support_ball)
    }
}

impl From<Phantom> for RawPhantom {
    fn from(p: Phantom) -> Self {
        RawPhantom { ellipsoids: p.ellipsoids, support_ball: p.support_ball }
    }
}

/// Ellipsoid table `[A, a, b, c, x0, y0, z0, phi, theta, psi]` in units of
/// the support radius. Densities follow the higher-contrast variant that
/// makes interior structures visible.
pub const SHEPP_LOGAN_MODIFIED: [[f64; 10]; 10] = [
    [1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0, 0.0, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0, 0.0, 10.0],
    [-0.2, 0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0, 0.0, 10.0],
    [0.1, 0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0, 0.0, 0.0],
    [0.1, 0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0, 0.0, 0.0],
    [0.1, 0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0, 0.0, 0.0],
    [0.1, 0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0, 0.0, 0.0],
    [0.1, 0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.0, 0.0, 0.0],
    [0.1, 0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0, 0.0, 0.0],
];

/// Original low-contrast densities for the same ellipsoids.
pub const SHEPP_LOGAN_ORIGINAL_DENSITIES: [f64; 10] =
    [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];

impl Phantom {
    pub fn new(ellipsoids: Vec<Ellipsoid>, support_ball: Ball) -> Result<Phantom> {
        Ball::new(support_ball.center, support_ball.radius)?;
        for (i, e) in ellipsoids.iter().enumerate() {
            e.validate()?;
            if e.reach_from(support_ball.center) > support_ball.radius * (1.0 + 1e-12) {
                return Err(Error::Phantom(format!("ellipsoid {i} leaves the support ball")));
            }
        }
        Ok(Phantom { ellipsoids, support_ball })
    }

    /// Builds a phantom from rows `[A, a, b, c, x0, y0, z0, phi, theta, psi]`
    /// given relative to a unit ball, scaled to `ball`.
    pub fn from_table(rows: &[[f64; 10]], ball: Ball) -> Result<Phantom> {
        let r = ball.radius;
        let ellipsoids = rows
            .iter()
            .map(|row| Ellipsoid {
                center: ball.center + Vec3::new(row[4], row[5], row[6]) * r,
                semi_axes: [row[1] * r, row[2] * r, row[3] * r],
                euler_deg: [row[7], row[8], row[9]],
                density: row[0],
            })
            .collect();
        Phantom::new(ellipsoids, ball)
    }

    /// The same ellipsoids inside a larger support ball.
    pub fn with_support(&self, support: Ball) -> Result<Phantom> {
        Phantom::new(self.ellipsoids.clone(), support)
    }

    pub fn ellipsoids(&self) -> &[Ellipsoid] {
        &self.ellipsoids
    }

    pub fn support_ball(&self) -> &Ball {
        &self.support_ball
    }

    /// Same phantom stretched about the support center to a new radius.
    pub fn scaled(&self, radius: f64) -> Result<Phantom> {
        let k = radius / self.support_ball.radius;
        let c = self.support_ball.center;
        let ellipsoids = self
            .ellipsoids
            .iter()
            .map(|e| Ellipsoid {
                center: c + (e.center - c) * k,
                semi_axes: e.semi_axes.map(|a| a * k),
                ..e.clone()
            })
            .collect();
        Phantom::new(ellipsoids, Ball::new(c, radius)?)
    }

    pub fn density(&self, p: Vec3) -> f64 {
        self.ellipsoids.iter().filter(|e| e.contains(p)).map(|e| e.density).sum()
    }

    /// Samples the density at voxel centers of an `n`-grid centered on the
    /// support ball. `supersample > 1` averages `supersample^3` sub-points
    /// per voxel.
    pub fn voxelize(&self, n: usize, voxel_size: f64, supersample: usize) -> Result<VoxelVolume> {
        if n < 8 {
            return Err(Error::Phantom(format!("grid side must be at least 8, got {n}")));
        }
        let k = supersample.max(1);
        let c = self.support_ball.center;
        let offsets: Vec<f64> =
            (0..k).map(|i| ((i as f64 + 0.5) / k as f64 - 0.5) * voxel_size).collect();
        let norm = 1.0 / (k * k * k) as f64;
        let vol = VoxelVolume::from_fn(n, voxel_size, |p| {
            let p = p + c;
            if k == 1 {
                return self.density(p);
            }
            let mut acc = 0.0;
            for &dz in &offsets {
                for &dy in &offsets {
                    for &dx in &offsets {
                        acc += self.density(p + Vec3::new(dx, dy, dz));
                    }
                }
            }
            acc * norm
        })?;
        let half = 0.5 * n as f64 * voxel_size;
        VoxelVolume::new(n, voxel_size, c - Vec3::new(half, half, half), vol.into_values())
    }
}

impl LineIntegrals for Phantom {
    fn support(&self) -> Option<Ball> {
        Some(self.support_ball)
    }

    fn half_ray(&self, ray: &Ray) -> f64 {
        self.ellipsoids
            .iter()
            .filter_map(|e| e.chord(ray).map(|(t0, t1)| e.density * (t1 - t0.max(0.0)).max(0.0)))
            .sum()
    }

    fn full_line(&self, ray: &Ray) -> f64 {
        self.ellipsoids.iter().filter_map(|e| e.chord(ray).map(|(t0, t1)| e.density * (t1 - t0))).sum()
    }
}

/// The 3D Shepp-Logan head phantom in the unit ball at the origin.
pub fn shepp_logan_3d() -> Phantom {
    Phantom::from_table(&SHEPP_LOGAN_MODIFIED, Ball { center: Vec3::ZERO, radius: 1.0 })
        .expect("built-in table is valid")
}

/// Same geometry with the original low-contrast densities.
pub fn shepp_logan_3d_original() -> Phantom {
    let mut rows = SHEPP_LOGAN_MODIFIED;
    for (row, d) in rows.iter_mut().zip(SHEPP_LOGAN_ORIGINAL_DENSITIES) {
        row[0] = d;
    }
    Phantom::from_table(&rows, Ball { center: Vec3::ZERO, radius: 1.0 })
        .expect("built-in table is valid")
}

/// A single solid ball of density 1.
pub fn uniform_ball(center: Vec3, radius: f64, support: Ball) -> Result<Phantom> {
    Phantom::new(
        vec![Ellipsoid { center, semi_axes: [radius; 3], euler_deg: [0.0; 3], density: 1.0 }],
        support,
    )
}

/// Isotropic Gaussian `amplitude * exp(-|x - center|^2 / (2 sigma^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    pub center: Vec3,
    pub sigma: f64,
    pub amplitude: f64,
}

impl GaussianBlob {
    pub fn density(&self, p: Vec3) -> f64 {
        self.amplitude * (-(p - self.center).norm2() / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Continuous Fourier transform `int f(x) exp(-i k.x) dx` as (re, im).
    pub fn fourier(&self, k: Vec3) -> (f64, f64) {
        let mag = self.amplitude
            * (2.0 * PI).powf(1.5)
            * self.sigma.powi(3)
            * (-0.5 * self.sigma * self.sigma * k.norm2()).exp();
        let phase = -k.dot(self.center);
        (mag * phase.cos(), mag * phase.sin())
    }

    /// Plane integral over `{x : <theta, x> = rho}` for unit `theta`.
    pub fn radon(&self, theta: Vec3, rho: f64) -> f64 {
        let d = rho - theta.dot(self.center);
        self.amplitude * 2.0 * PI * self.sigma * self.sigma * (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }
}

impl LineIntegrals for GaussianBlob {
    fn half_ray(&self, ray: &Ray) -> f64 {
        let to_c = self.center - ray.source;
        let t_star = to_c.dot(ray.direction);
        let d2 = (to_c - ray.direction * t_star).norm2();
        let s = self.sigma;
        self.amplitude
            * (-d2 / (2.0 * s * s)).exp()
            * s
            * (PI / 2.0).sqrt()
            * (1.0 + libm::erf(t_star / (s * std::f64::consts::SQRT_2)))
    }

    fn full_line(&self, ray: &Ray) -> f64 {
        let to_c = self.center - ray.source;
        let t_star = to_c.dot(ray.direction);
        let d2 = (to_c - ray.direction * t_star).norm2();
        let s = self.sigma;
        self.amplitude * (-d2 / (2.0 * s * s)).exp() * s * (2.0 * PI).sqrt()
    }
}

/// Sum of Gaussian blobs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlobPhantom {
    pub blobs: Vec<GaussianBlob>,
}

impl BlobPhantom {
    pub fn single(center: Vec3, sigma: f64, amplitude: f64) -> BlobPhantom {
        BlobPhantom { blobs: vec![GaussianBlob { center, sigma, amplitude }] }
    }

    pub fn density(&self, p: Vec3) -> f64 {
        self.blobs.iter().map(|b| b.density(p)).sum()
    }

    pub fn fourier(&self, k: Vec3) -> (f64, f64) {
        self.blobs.iter().map(|b| b.fourier(k)).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    pub fn radon(&self, theta: Vec3, rho: f64) -> f64 {
        self.blobs.iter().map(|b| b.radon(theta, rho)).sum()
    }

    /// Point samples on a grid centered at the world origin.
    pub fn voxelize(&self, n: usize, voxel_size: f64) -> Result<VoxelVolume> {
        VoxelVolume::from_fn(n, voxel_size, |p| self.density(p))
    }
}

impl LineIntegrals for BlobPhantom {
    fn half_ray(&self, ray: &Ray) -> f64 {
        self.blobs.iter().map(|b| b.half_ray(ray)).sum()
    }

    fn full_line(&self, ray: &Ray) -> f64 {
        self.blobs.iter().map(|b| b.full_line(ray)).sum()
    }
}

/// Trilinear ray sums through a voxel grid at a chosen step.
#[derive(Clone, Copy, Debug)]
pub struct SampledVolume<'a> {
    pub volume: &'a VoxelVolume,
    /// Step as a fraction of the voxel size.
    pub step_fraction: f64,
}

impl LineIntegrals for SampledVolume<'_> {
    fn support(&self) -> Option<Ball> {
        Some(self.volume.support_ball())
    }

    fn half_ray(&self, ray: &Ray) -> f64 {
        self.volume.ray_integral(ray, 0.0, self.step_fraction)
    }

    fn full_line(&self, ray: &Ray) -> f64 {
        self.volume.ray_integral(ray, f64::NEG_INFINITY, self.step_fraction)
    }
}

impl LineIntegrals for VoxelVolume {
    fn support(&self) -> Option<Ball> {
        Some(self.support_ball())
    }

    fn half_ray(&self, ray: &Ray) -> f64 {
        self.ray_integral(ray, 0.0, 0.5)
    }

    fn full_line(&self, ray: &Ray) -> f64 {
        self.ray_integral(ray, f64::NEG_INFINITY, 0.5)
    }
}

/// Evaluates many half-ray integrals in parallel, preserving order.
pub fn half_ray_integrals<L: LineIntegrals + ?Sized>(f: &L, rays: &[Ray]) -> Vec<f64> {
    rays.par_iter().map(|r| f.half_ray(r)).collect()
}
