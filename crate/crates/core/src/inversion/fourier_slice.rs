//! Parallel-ray inversion: direct Fourier gridding and filtered
//! backprojection.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{bilinear, cubic_weights, InverseOperator};
use crate::error::{Error, Result};
use crate::fft::{fft2, fft3, signed_index, C64};
use crate::geometry::Vec3;
use crate::projector::{ParallelGrid, ProjectionSet};
use crate::volume::VoxelVolume;

/// Zero-padded 2D spectrum of one parallel view, `G(w) = int g(u) e^{-i w.u} du`,
/// sampled at `w = d_omega * (k_col, k_row)` with signed indices.
#[derive(Clone, Debug)]
pub struct SliceSpectrum {
    pub size: usize,
    pub d_omega: f64,
    /// Row-major `size x size`, row index along the second frame axis.
    pub values: Vec<C64>,
}

impl SliceSpectrum {
    fn from_view(view: &[f64], nu: usize, du: f64) -> SliceSpectrum {
        let size = 2 * nu;
        let mut buf = vec![C64::new(0.0, 0.0); size * size];
        let half = nu / 2;
        for b in 0..nu {
            let rb = (b + size - half) % size;
            for a in 0..nu {
                let ra = (a + size - half) % size;
                buf[rb * size + ra] = C64::new(view[b * nu + a], 0.0);
            }
        }
        fft2(&mut buf, size, size, false);
        let area = du * du;
        for v in &mut buf {
            *v *= area;
        }
        SliceSpectrum { size, d_omega: 2.0 * PI / (size as f64 * du), values: buf }
    }

    /// Catmull-Rom interpolation at in-plane frequency `(w1, w2)`.
    pub fn at(&self, w1: f64, w2: f64) -> C64 {
        let n = self.size as isize;
        let x = w1 / self.d_omega;
        let y = w2 / self.d_omega;
        let (x0, y0) = (x.floor(), y.floor());
        let wx = cubic_weights(x - x0);
        let wy = cubic_weights(y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let mut acc = C64::new(0.0, 0.0);
        for (j, wyj) in wy.iter().enumerate() {
            let row = (y0 + j as isize - 1).rem_euclid(n) as usize * self.size;
            let mut racc = C64::new(0.0, 0.0);
            for (i, wxi) in wx.iter().enumerate() {
                let col = (x0 + i as isize - 1).rem_euclid(n) as usize;
                racc += self.values[row + col] * *wxi;
            }
            acc += racc * *wyj;
        }
        acc
    }
}

fn parallel_grid(p: &ProjectionSet) -> Result<&ParallelGrid> {
    p.acquisition()
        .parallel()
        .ok_or_else(|| Error::Inversion("parallel inversion needs parallel-ray data".into()))
}

/// Spectrum of view `view` of parallel data.
pub fn slice_spectrum(p: &ProjectionSet, view: usize) -> Result<SliceSpectrum> {
    let grid = parallel_grid(p)?;
    if view >= grid.directions().len() {
        return Err(Error::Inversion(format!("view {view} out of range")));
    }
    Ok(SliceSpectrum::from_view(p.view(view), grid.nu(), grid.du()))
}

const CHUNKS: usize = 8;

/// Direct Fourier inversion. Each view's spectrum fills the frequency cells
/// within a thin slab around its plane, weighted by inverse distance to the
/// plane; the 3D inverse transform is then restricted to the ball.
pub fn fourier_slice_inverse(p: &ProjectionSet, op: &InverseOperator) -> Result<VoxelVolume> {
    let grid = parallel_grid(p)?;
    let ball = *grid.ball();
    let n = op.grid.n;
    let s = op.grid.voxel_size;
    let m = n * op.fourier.oversampling.max(1);
    let dz = 2.0 * PI / (m as f64 * s);
    let k_max = PI / s.max(grid.du());
    let hw = op.fourier.slab_halfwidth.max(0.5);
    let eps = 1e-6 * dz;
    let dirs = grid.directions();
    let per_chunk = dirs.len().div_ceil(CHUNKS).max(1);
    let mm = m * m * m;

    let partials: Vec<(Vec<C64>, Vec<f64>)> = dirs
        .par_chunks(per_chunk)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = vec![C64::new(0.0, 0.0); mm];
            let mut wsum = vec![0.0; mm];
            for (off, &theta) in chunk.iter().enumerate() {
                let view = ci * per_chunk + off;
                let spec = SliceSpectrum::from_view(p.view(view), grid.nu(), grid.du());
                let (e1, e2) = grid.frame(view);
                rasterize_slab(theta, m, dz, hw, k_max, |idx, z| {
                    let d = z.dot(theta);
                    let zp = z - theta * d;
                    let w = 1.0 / (d.abs() + eps);
                    acc[idx] += spec.at(zp.dot(e1), zp.dot(e2)) * w;
                    wsum[idx] += w;
                });
            }
            (acc, wsum)
        })
        .collect();

    let mut acc = vec![C64::new(0.0, 0.0); mm];
    let mut wsum = vec![0.0; mm];
    for (a, w) in &partials {
        for i in 0..mm {
            acc[i] += a[i];
            wsum[i] += w[i];
        }
    }
    drop(partials);

    let y0 = (-(n as f64) / 2.0 + 0.5) * s;
    let mut gaps = Vec::new();
    let mut gap_count = 0;
    for k3 in 0..m {
        for k2 in 0..m {
            for k1 in 0..m {
                let idx = (k3 * m + k2) * m + k1;
                let kv = [signed_index(k1, m), signed_index(k2, m), signed_index(k3, m)];
                let z = Vec3::new(kv[0] as f64, kv[1] as f64, kv[2] as f64) * dz;
                let r = z.norm() / k_max;
                let win = op.filter.response(r);
                if wsum[idx] == 0.0 {
                    if r <= op.filter.cutoff && r < 1.0 {
                        gap_count += 1;
                        if gaps.len() < 5 {
                            gaps.push(format!("{:?}", kv));
                        }
                    }
                    acc[idx] = C64::new(0.0, 0.0);
                    continue;
                }
                let phase = y0 * (z.x + z.y + z.z);
                acc[idx] = acc[idx] / wsum[idx] * win * C64::new(phase.cos(), phase.sin());
            }
        }
    }
    if gap_count > 0 {
        return Err(Error::CoverageGap { count: gap_count, examples: gaps.join(", ") });
    }
    fft3(&mut acc, m, true);
    let scale = 1.0 / (m as f64 * s).powi(3);
    let mut values = vec![0.0; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                values[(k * n + j) * n + i] = acc[(k * m + j) * m + i].re * scale;
            }
        }
    }
    let out = op.grid.zeros(&ball)?.with_values(values)?;
    Ok(out.restricted_to(&ball))
}

/// Visits every frequency cell `k` (signed, `|k_i| < m/2`) with
/// `|k . theta| <= hw` and `|z| <= k_max`, passing its buffer index and `z`.
fn rasterize_slab<F: FnMut(usize, Vec3)>(
    theta: Vec3,
    m: usize,
    dz: f64,
    hw: f64,
    k_max: f64,
    mut visit: F,
) {
    let t = theta.to_array();
    let ax = (0..3).max_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs())).expect("three axes");
    let (o1, o2) = ((ax + 1) % 3, (ax + 2) % 3);
    let lo = -((m / 2) as isize);
    let hi = (m - m / 2) as isize - 1;
    let kmax2 = (k_max / dz).powi(2);
    for a in lo..=hi {
        for b in lo..=hi {
            let rest = a as f64 * t[o1] + b as f64 * t[o2];
            let c0 = (-hw - rest) / t[ax];
            let c1 = (hw - rest) / t[ax];
            let (c0, c1) = if c0 <= c1 { (c0, c1) } else { (c1, c0) };
            let start = (c0.ceil() as isize).max(lo);
            let end = (c1.floor() as isize).min(hi);
            for c in start..=end {
                let mut k = [0isize; 3];
                k[o1] = a;
                k[o2] = b;
                k[ax] = c;
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                if k2 > kmax2 {
                    continue;
                }
                let w = |v: isize| v.rem_euclid(m as isize) as usize;
                let idx = (w(k[2]) * m + w(k[1])) * m + w(k[0]);
                visit(idx, Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64) * dz);
            }
        }
    }
}

/// Filtered backprojection for parallel rays over the hemisphere:
/// `f(x) = 1/(2 pi^2) int_{hemisphere} (Lambda g_theta)(E_theta x) dtheta`
/// with `Lambda` the 2D ramp filter.
pub fn parallel_fbp(p: &ProjectionSet, op: &InverseOperator) -> Result<VoxelVolume> {
    let grid = parallel_grid(p)?;
    let ball = *grid.ball();
    let nu = grid.nu();
    let du = grid.du();
    let size = 2 * nu;
    let nyq = PI / du;
    let filtered: Vec<Vec<f64>> = (0..grid.directions().len())
        .into_par_iter()
        .map(|v| {
            let spec = SliceSpectrum::from_view(p.view(v), nu, du);
            let mut buf = spec.values;
            for kb in 0..size {
                for ka in 0..size {
                    let w = spec.d_omega
                        * ((signed_index(kb, size).pow(2) + signed_index(ka, size).pow(2)) as f64).sqrt();
                    buf[kb * size + ka] *= w * op.filter.response(w / nyq);
                }
            }
            fft2(&mut buf, size, size, true);
            // undo the du^2 of the forward spectrum and the 1/(P du)^2 of the inverse
            let scale = 1.0 / (size as f64 * du).powi(2);
            let half = nu / 2;
            let mut out = vec![0.0; nu * nu];
            for b in 0..nu {
                let rb = (b + size - half) % size;
                for a in 0..nu {
                    let ra = (a + size - half) % size;
                    out[b * nu + a] = buf[rb * size + ra].re * scale;
                }
            }
            out
        })
        .collect();
    let frames: Vec<(Vec3, Vec3)> = (0..grid.directions().len()).map(|v| grid.frame(v)).collect();
    let weight = 1.0 / (PI * grid.directions().len() as f64);
    backproject_planes(&filtered, &frames, nu, du, &ball, op, weight)
}

/// Sums `weight * q_v(E_v (x - c))` over views for every voxel in the ball.
fn backproject_planes(
    filtered: &[Vec<f64>],
    frames: &[(Vec3, Vec3)],
    nu: usize,
    du: f64,
    ball: &crate::geometry::Ball,
    op: &InverseOperator,
    weight: f64,
) -> Result<VoxelVolume> {
    let out = op.grid.zeros(ball)?;
    let n = out.n();
    let mut values = vec![0.0; n * n * n];
    let half = (nu / 2) as f64;
    let r2 = ball.radius * ball.radius * (1.0 + 1e-12);
    values.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
        let pts: Vec<(usize, Vec3)> = (0..n * n)
            .filter_map(|ij| {
                let x = out.voxel_center(ij % n, ij / n, k) - ball.center;
                (x.norm2() <= r2).then_some((ij, x))
            })
            .collect();
        for (q, &(e1, e2)) in filtered.iter().zip(frames) {
            for &(ij, x) in &pts {
                let a = x.dot(e1) / du + half;
                let b = x.dot(e2) / du + half;
                slab[ij] += bilinear(q, nu, nu, b, a);
            }
        }
        for v in slab.iter_mut() {
            *v *= weight;
        }
    });
    out.with_values(values)
}
