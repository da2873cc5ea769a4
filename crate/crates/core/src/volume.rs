//! Cubic voxel grids supported in their inscribed ball.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Ball, Ray, Vec3};

/// Density sampled at voxel centers `origin + (i + 0.5) * voxel_size`,
/// stored x-fastest. Values outside the inscribed ball are always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelVolume {
    n: usize,
    voxel_size: f64,
    origin: Vec3,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub n: usize,
    pub voxel_size: f64,
    pub origin: Vec3,
}

impl VoxelVolume {
    /// Builds a volume, zeroing every voxel whose center lies outside the
    /// inscribed ball.
    pub fn new(n: usize, voxel_size: f64, origin: Vec3, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Volume("grid side must be positive".into()));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) || !origin.is_finite() {
            return Err(Error::Volume(format!("invalid voxel size {voxel_size} or origin")));
        }
        if values.len() != n * n * n {
            return Err(Error::Volume(format!(
                "expected {} values for n = {n}, got {}",
                n * n * n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Volume(format!("non-finite value at index {i}")));
        }
        let mut vol = VoxelVolume { n, voxel_size, origin, values };
        vol.mask_to_support();
        Ok(vol)
    }

    /// Zero volume whose grid is centered at the world origin.
    pub fn zeros(n: usize, voxel_size: f64) -> Result<Self> {
        let half = 0.5 * n as f64 * voxel_size;
        VoxelVolume::new(n, voxel_size, Vec3::new(-half, -half, -half), vec![0.0; n * n * n])
    }

    pub fn zeros_like(other: &VoxelVolume) -> Self {
        VoxelVolume { values: vec![0.0; other.values.len()], ..other.clone() }
    }

    /// Samples `f` at voxel centers of a grid centered at the world origin.
    pub fn from_fn<F>(n: usize, voxel_size: f64, f: F) -> Result<Self>
    where
        F: Fn(Vec3) -> f64 + Sync,
    {
        let mut vol = VoxelVolume::zeros(n, voxel_size)?;
        let grid = vol.header();
        vol.values.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
            for j in 0..n {
                for i in 0..n {
                    slab[j * n + i] = f(center_of(&grid, i, j, k));
                }
            }
        });
        if vol.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Volume("sampled function produced non-finite values".into()));
        }
        vol.mask_to_support();
        Ok(vol)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader { n: self.n, voxel_size: self.voxel_size, origin: self.origin }
    }

    /// The inscribed ball that carries the support.
    pub fn support_ball(&self) -> Ball {
        let half = 0.5 * self.n as f64 * self.voxel_size;
        Ball { center: self.origin + Vec3::new(half, half, half), radius: half }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.n + j) * self.n + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        center_of(&self.header(), i, j, k)
    }

    pub fn same_grid(&self, other: &VoxelVolume) -> bool {
        self.n == other.n
            && (self.voxel_size - other.voxel_size).abs() <= 1e-12 * self.voxel_size
            && (self.origin - other.origin).norm() <= 1e-9 * self.voxel_size
    }

    /// Applies `f` to every value, then re-masks to the support.
    pub fn map_values<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Result<Self> {
        VoxelVolume::new(self.n, self.voxel_size, self.origin, self.values.par_iter().map(|&v| f(v)).collect())
    }

    /// Replaces values, keeping the grid.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        VoxelVolume::new(self.n, self.voxel_size, self.origin, values)
    }

    pub fn scaled(&self, alpha: f64) -> VoxelVolume {
        VoxelVolume { values: self.values.iter().map(|v| v * alpha).collect(), ..self.clone() }
    }

    /// `self + alpha * other` on matching grids.
    pub fn axpy(&self, alpha: f64, other: &VoxelVolume) -> Result<VoxelVolume> {
        self.check_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(VoxelVolume { values, ..self.clone() })
    }

    pub fn check_grid(&self, other: &VoxelVolume) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Volume("volumes live on different grids".into()))
        }
    }

    /// Zeroes values whose voxel centers are outside `ball`.
    pub fn restricted_to(&self, ball: &Ball) -> VoxelVolume {
        let mut out = self.clone();
        out.zero_outside(ball);
        out
    }

    fn mask_to_support(&mut self) {
        let b = self.support_ball();
        self.zero_outside(&b);
    }

    fn zero_outside(&mut self, ball: &Ball) {
        let grid = self.header();
        let n = self.n;
        let r2 = ball.radius * ball.radius * (1.0 + 1e-12);
        self.values.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
            for j in 0..n {
                for i in 0..n {
                    if (center_of(&grid, i, j, k) - ball.center).norm2() > r2 {
                        slab[j * n + i] = 0.0;
                    }
                }
            }
        });
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L1 norm, `sum |f| * voxel_size^3`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.voxel_size.powi(3)
    }

    /// Discrete L2 norm, `sqrt(sum f^2 * voxel_size^3)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.voxel_size.powi(3)).sqrt()
    }

    /// Trilinear interpolation between voxel centers; zero beyond the grid.
    pub fn sample(&self, p: Vec3) -> f64 {
        let inv = 1.0 / self.voxel_size;
        let gx = (p.x - self.origin.x) * inv - 0.5;
        let gy = (p.y - self.origin.y) * inv - 0.5;
        let gz = (p.z - self.origin.z) * inv - 0.5;
        let n = self.n as isize;
        let (x0, y0, z0) = (gx.floor(), gy.floor(), gz.floor());
        let (fx, fy, fz) = (gx - x0, gy - y0, gz - z0);
        let (x0, y0, z0) = (x0 as isize, y0 as isize, z0 as isize);
        if x0 < -1 || y0 < -1 || z0 < -1 || x0 >= n || y0 >= n || z0 >= n {
            return 0.0;
        }
        let interior = x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < n && y0 + 1 < n && z0 + 1 < n;
        let nn = self.n;
        if interior {
            let base = ((z0 as usize * nn) + y0 as usize) * nn + x0 as usize;
            let v = &self.values;
            let sx = nn * nn;
            let c00 = v[base] + fx * (v[base + 1] - v[base]);
            let c10 = v[base + nn] + fx * (v[base + nn + 1] - v[base + nn]);
            let c01 = v[base + sx] + fx * (v[base + sx + 1] - v[base + sx]);
            let c11 = v[base + sx + nn] + fx * (v[base + sx + nn + 1] - v[base + sx + nn]);
            let c0 = c00 + fy * (c10 - c00);
            let c1 = c01 + fy * (c11 - c01);
            return c0 + fz * (c1 - c0);
        }
        let at = |i: isize, j: isize, k: isize| -> f64 {
            if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
                0.0
            } else {
                self.values[((k as usize * nn) + j as usize) * nn + i as usize]
            }
        };
        let mut acc = 0.0;
        for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
            for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
                    acc += wx * wy * wz * at(x0 + di, y0 + dj, z0 + dk);
                }
            }
        }
        acc
    }

    /// Parameter interval of `ray`'s full line over which samples can be
    /// nonzero: the grid box intersected with a slightly enlarged support ball.
    fn active_interval(&self, ray: &Ray) -> Option<(f64, f64)> {
        let support = self.support_ball();
        let padded = Ball { center: support.center, radius: support.radius + self.voxel_size };
        let (mut t0, mut t1) = padded.chord(ray)?;
        let hi = self.origin + Vec3::new(1.0, 1.0, 1.0) * (self.n as f64 * self.voxel_size);
        for (o, d, lo, hi) in [
            (ray.source.x, ray.direction.x, self.origin.x, hi.x),
            (ray.source.y, ray.direction.y, self.origin.y, hi.y),
            (ray.source.z, ray.direction.z, self.origin.z, hi.z),
        ] {
            if d.abs() < 1e-300 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t1 > t0).then_some((t0, t1))
    }

    /// Trapezoid-rule integral of the interpolated density over `t` in
    /// `[t_min, inf)` along `ray`, with step `voxel_size * step_fraction`.
    pub fn ray_integral(&self, ray: &Ray, t_min: f64, step_fraction: f64) -> f64 {
        let Some((t0, t1)) = self.active_interval(ray) else {
            return 0.0;
        };
        let t0 = t0.max(t_min);
        if t1 <= t0 {
            return 0.0;
        }
        let m = ((t1 - t0) / (self.voxel_size * step_fraction)).ceil().max(1.0) as usize;
        let h = (t1 - t0) / m as f64;
        let mut acc = 0.5 * (self.sample(ray.at(t0)) + self.sample(ray.at(t1)));
        for i in 1..m {
            acc += self.sample(ray.at(t0 + h * i as f64));
        }
        acc * h
    }

    pub fn write_raw(&self, raw_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(raw_path, bytes)?;
        let header = serde_json::to_string_pretty(&self.header())?;
        fs::write(sidecar_path(raw_path), header + "\n")?;
        Ok(())
    }

    pub fn read_raw(raw_path: &Path) -> Result<VoxelVolume> {
        let header: VolumeHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(raw_path))?)?;
        let bytes = fs::read(raw_path)?;
        if bytes.len() != header.n.pow(3) * 4 {
            return Err(Error::Volume(format!(
                "{} holds {} bytes, sidecar expects {}",
                raw_path.display(),
                bytes.len(),
                header.n.pow(3) * 4
            )));
        }
        let values =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        VoxelVolume::new(header.n, header.voxel_size, header.origin, values)
    }
}

/// Sidecar JSON path for a raw data file: `x.raw` becomes `x.json`.
pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

fn center_of(h: &VolumeHeader, i: usize, j: usize, k: usize) -> Vec3 {
    let s = h.voxel_size;
    h.origin + Vec3::new((i as f64 + 0.5) * s, (j as f64 + 0.5) * s, (k as f64 + 0.5) * s)
}
