//! Grangeat-type inversion for source curves satisfying Tuy's condition.
//!
//! For a source `s` and a plane normal `theta`, the detector data give
//! `Q(s, theta) = int_{alpha perp theta} d/de G(s, alpha + e theta) dalpha`,
//! which equals the radial derivative of the 3D Radon transform on the plane
//! through `s`. These values are rebinned onto a regular `(theta, rho)` grid
//! by locating the plane-curve intersections, differentiated once more in
//! `rho`, and backprojected with the 3D Radon inversion formula.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{bilinear, cubic_weights, InverseOperator};
use crate::error::{Error, Result};
use crate::geometry::{fibonacci_hemisphere, tuy_check, CurvePiece, SourceGeometry, SourceSample, Vec3};
use crate::projector::ProjectionSet;
use crate::volume::VoxelVolume;

/// Intermediate data of the Grangeat pipeline.
#[derive(Clone, Debug)]
pub struct GrangeatIntermediate {
    /// Plane normals (upper hemisphere).
    pub directions: Vec<Vec3>,
    /// Offsets `rho` relative to the ball center.
    pub rho: Vec<f64>,
    /// `Q(s_i, theta_j)` laid out `[source][direction]`.
    pub source_derivative: Vec<f64>,
    /// First radial derivative of the Radon transform, `[direction][rho]`.
    pub radon_derivative: Vec<f64>,
    /// Number of plane-curve intersections averaged per `(theta, rho)`.
    pub redundancy: Vec<u32>,
}

impl GrangeatIntermediate {
    pub fn radon_derivative_at(&self, j: usize, m: usize) -> f64 {
        self.radon_derivative[j * self.rho.len() + m]
    }
}

fn source_derivative(
    s: &SourceSample,
    view: &[f64],
    geom: &SourceGeometry,
    theta: Vec3,
    arc_samples: usize,
) -> f64 {
    let ball = geom.ball();
    let det = geom.detector();
    let to_c = ball.center - s.position;
    let d = theta.dot(to_c);
    if d.abs() >= ball.radius {
        return 0.0;
    }
    let in_plane = to_c - theta * d;
    let dist = in_plane.norm();
    let a = in_plane / dist;
    let b = theta.cross(a);
    let disk = (ball.radius * ball.radius - d * d).sqrt();
    let half = (disk / dist).min(1.0).asin() * 1.05;
    let eps = det.spacing / det.sdd;
    let n = arc_samples.max(8);
    let dphi = 2.0 * half / n as f64;
    let lookup = |dir: Vec3| -> f64 {
        match s.project_direction(det, dir) {
            Some((r, c)) => bilinear(view, det.rows, det.cols, r, c),
            None => 0.0,
        }
    };
    let mut acc = 0.0;
    for i in 0..=n {
        let phi = -half + dphi * i as f64;
        let alpha = a * phi.cos() + b * phi.sin();
        let diff = lookup(alpha + theta * eps) - lookup(alpha - theta * eps);
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * diff;
    }
    acc * dphi / (2.0 * eps)
}

/// Uniformly spaced samples of one curve piece.
struct PieceSamples {
    piece: CurvePiece,
    /// Indices into the source list, in parameter order.
    sources: Vec<usize>,
    t0: f64,
    dt: f64,
}

impl PieceSamples {
    /// Catmull-Rom interpolation of `values[source]` at parameter `t`.
    fn interpolate(&self, t: f64, value: impl Fn(usize) -> f64) -> Option<f64> {
        let len = self.sources.len() as isize;
        let x = (t - self.t0) / self.dt;
        let closed = self.piece.is_closed();
        if !closed && (x < 0.0 || x > (len - 1) as f64) {
            return None;
        }
        let i0 = x.floor();
        let w = cubic_weights(x - i0);
        let i0 = i0 as isize;
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let mut i = i0 + k as isize - 1;
            if closed {
                i = i.rem_euclid(len);
            } else {
                i = i.clamp(0, len - 1);
            }
            acc += wk * value(self.sources[i as usize]);
        }
        Some(acc)
    }
}

fn piece_samples(geom: &SourceGeometry, sources: &[SourceSample]) -> Vec<PieceSamples> {
    geom.curve_pieces()
        .into_iter()
        .enumerate()
        .map(|(pi, piece)| {
            let idx: Vec<usize> = (0..sources.len()).filter(|&i| sources[i].piece == pi).collect();
            let t0 = sources[idx[0]].param;
            let dt = if idx.len() > 1 {
                sources[idx[1]].param - t0
            } else {
                2.0 * PI
            };
            PieceSamples { piece, sources: idx, t0, dt }
        })
        .collect()
}

/// Computes the rebinned first Radon derivative from cone-beam data.
pub fn grangeat_intermediate(p: &ProjectionSet, op: &InverseOperator) -> Result<GrangeatIntermediate> {
    let geom = p
        .acquisition()
        .cone()
        .filter(|g| g.kind().is_curve())
        .ok_or_else(|| Error::Inversion("Grangeat inversion needs cone-beam data on a curve".into()))?;
    let ball = *geom.ball();
    let opts = op.grangeat;
    let report = tuy_check(geom, &ball, opts.tuy_points, opts.tuy_directions, opts.tuy_tolerance);
    if !report.pass {
        let examples = report
            .failures
            .iter()
            .take(3)
            .map(|(x, t)| format!("x={x} theta={t}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::TuyFailure {
            count: report.failures.len().max(1),
            examples: if examples.is_empty() {
                format!("worst margin {:.2e}", report.worst_margin)
            } else {
                examples
            },
        });
    }

    let sources = geom.sample_sources();
    let directions = fibonacci_hemisphere(opts.directions.max(1));
    let nd = directions.len();
    let d_rho = opts.rho_step * op.grid.voxel_size;
    let m_rho = (ball.radius / d_rho).ceil() as isize + 2;
    let rho: Vec<f64> = (-m_rho..=m_rho).map(|m| m as f64 * d_rho).collect();
    let nr = rho.len();

    let q: Vec<f64> = sources
        .par_iter()
        .enumerate()
        .flat_map_iter(|(v, s)| {
            let view = p.view(v);
            directions
                .iter()
                .map(move |&theta| source_derivative(s, view, geom, theta, opts.arc_samples))
                .collect::<Vec<_>>()
        })
        .collect();

    let pieces = piece_samples(geom, &sources);
    let rows: Vec<(Vec<f64>, Vec<u32>)> = directions
        .par_iter()
        .enumerate()
        .map(|(j, &theta)| {
            let mut out = vec![0.0; nr];
            let mut count = vec![0u32; nr];
            let base = theta.dot(ball.center);
            for (m, &r) in rho.iter().enumerate() {
                if r.abs() >= ball.radius {
                    continue;
                }
                let mut acc = 0.0;
                let mut hits = 0u32;
                for ps in &pieces {
                    for (t, _) in ps.piece.plane_intersections(theta, base + r) {
                        if let Some(v) = ps.interpolate(t, |i| q[i * nd + j]) {
                            acc += v;
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    out[m] = acc / hits as f64;
                    count[m] = hits;
                }
            }
            (out, count)
        })
        .collect();
    let mut radon_derivative = Vec::with_capacity(nd * nr);
    let mut redundancy = Vec::with_capacity(nd * nr);
    for (r, c) in rows {
        radon_derivative.extend(r);
        redundancy.extend(c);
    }
    Ok(GrangeatIntermediate { directions, rho, source_derivative: q, radon_derivative, redundancy })
}

/// `f(x) = -1/(8 pi^2) int_{S^2} d^2/drho^2 Rf(theta, <theta, x>) dtheta`
/// evaluated from rebinned cone-beam data.
pub fn grangeat_inverse(p: &ProjectionSet, op: &InverseOperator) -> Result<VoxelVolume> {
    let inter = grangeat_intermediate(p, op)?;
    let ball = *p.acquisition().ball();
    let nr = inter.rho.len();
    let d_rho = inter.rho[1] - inter.rho[0];
    let second: Vec<Vec<f64>> = (0..inter.directions.len())
        .map(|j| {
            (0..nr)
                .map(|m| {
                    if m == 0 || m + 1 == nr {
                        0.0
                    } else {
                        (inter.radon_derivative_at(j, m + 1) - inter.radon_derivative_at(j, m - 1))
                            / (2.0 * d_rho)
                    }
                })
                .collect()
        })
        .collect();
    let out = op.grid.zeros(&ball)?;
    let n = out.n();
    let rho0 = inter.rho[0];
    let r2 = ball.radius * ball.radius * (1.0 + 1e-12);
    let weight = -1.0 / (2.0 * PI * inter.directions.len() as f64);
    let mut values = vec![0.0; n * n * n];
    values.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
        let pts: Vec<(usize, Vec3)> = (0..n * n)
            .filter_map(|ij| {
                let x = out.voxel_center(ij % n, ij / n, k) - ball.center;
                (x.norm2() <= r2).then_some((ij, x))
            })
            .collect();
        for (theta, row) in inter.directions.iter().zip(&second) {
            for &(ij, x) in &pts {
                let pos = (theta.dot(x) - rho0) / d_rho;
                let i0 = pos.floor();
                let f = pos - i0;
                let i0 = i0 as usize;
                if i0 + 1 < nr {
                    slab[ij] += (1.0 - f) * row[i0] + f * row[i0 + 1];
                }
            }
        }
        for v in slab.iter_mut() {
            *v *= weight;
        }
    });
    Ok(out.with_values(values)?.restricted_to(&ball))
}
