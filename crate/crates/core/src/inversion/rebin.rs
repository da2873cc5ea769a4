//! Inversion for spherical source sets by rebinning to parallel rays.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{bilinear, InverseKind, InverseOperator};
use crate::error::{Error, Result};
use crate::geometry::{SourceGeometry, SourceKind, SphereLayout, Vec3};
use crate::projector::{Acquisition, ParallelGrid, ProjectionSet};
use crate::volume::VoxelVolume;

fn sphere_geometry(p: &ProjectionSet) -> Result<(&SourceGeometry, SphereLayout)> {
    let geom = p
        .acquisition()
        .cone()
        .filter(|g| matches!(g.kind(), SourceKind::Sphere { .. }))
        .ok_or_else(|| Error::Inversion("spherical rebinning needs sphere-source data".into()))?;
    let layout = geom.sphere_layout().expect("sphere kind");
    Ok((geom, layout))
}

/// Sources surrounding a point of the source sphere with bilinear weights
/// in (polar, azimuth).
fn neighbors(layout: &SphereLayout, dir: Vec3, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let polar = dir.z.clamp(-1.0, 1.0).acos();
    let az = dir.y.atan2(dir.x).rem_euclid(2.0 * PI);
    let rings = &layout.ring_polar;
    let i = match rings.iter().rposition(|&r| r <= polar) {
        Some(i) if i + 1 < rings.len() => i,
        Some(i) => i - 1,
        None => 0,
    };
    let wp = ((polar - rings[i]) / (rings[i + 1] - rings[i])).clamp(0.0, 1.0);
    for (ring, w_ring) in [(i, 1.0 - wp), (i + 1, wp)] {
        if w_ring == 0.0 {
            continue;
        }
        let count = layout.ring_counts[ring];
        let offset = layout.ring_offsets[ring];
        if count == 1 {
            out.push((offset, w_ring));
            continue;
        }
        let x = az / (2.0 * PI / count as f64);
        let j0 = x.floor();
        let fa = x - j0;
        let j0 = j0 as usize % count;
        out.push((offset + j0, w_ring * (1.0 - fa)));
        out.push((offset + (j0 + 1) % count, w_ring * fa));
    }
}

/// Resamples spherical cone-beam data onto parallel lines. Each line is
/// evaluated from both of its crossings with the source sphere: the
/// surrounding sources contribute their rays through the line's foot point,
/// weighted bilinearly in (polar, azimuth), and the two ends are averaged.
pub fn rebin_to_parallel(p: &ProjectionSet, grid: &ParallelGrid) -> Result<ProjectionSet> {
    let (geom, layout) = sphere_geometry(p)?;
    let ball = *geom.ball();
    if (grid.ball().center - ball.center).norm() > 1e-9 * ball.radius
        || (grid.ball().radius - ball.radius).abs() > 1e-9 * ball.radius
    {
        return Err(Error::Inversion("parallel grid and cone data use different balls".into()));
    }
    let det = *geom.detector();
    let sources = geom.sample_sources();
    let rs = layout.radius;
    let nu = grid.nu();
    let r2 = ball.radius * ball.radius;
    let mut data = vec![0.0; grid.directions().len() * nu * nu];
    data.par_chunks_mut(nu * nu).enumerate().for_each(|(v, out)| {
        let theta = grid.directions()[v];
        let (e1, e2) = grid.frame(v);
        let mut nb = Vec::with_capacity(4);
        for b in 0..nu {
            for a in 0..nu {
                let (u1, u2) = (grid.offset(a), grid.offset(b));
                let uu = u1 * u1 + u2 * u2;
                if uu > r2 {
                    continue;
                }
                let foot = ball.center + e1 * u1 + e2 * u2;
                let h = (rs * rs - uu).sqrt();
                let mut acc = 0.0;
                for end in [foot + theta * h, foot - theta * h] {
                    neighbors(&layout, (end - ball.center) / rs, &mut nb);
                    for &(k, w) in &nb {
                        let s = &sources[k];
                        let dir = foot - s.position;
                        if let Some((r, c)) = s.project_direction(&det, dir / dir.norm()) {
                            acc += w * bilinear(p.view(k), det.rows, det.cols, r, c);
                        }
                    }
                }
                out[b * nu + a] = 0.5 * acc;
            }
        }
    });
    ProjectionSet::new(Acquisition::Parallel(grid.clone()), data)
}

/// Rebins to a parallel grid, then inverts with the parallel method.
pub fn spherical_inverse(p: &ProjectionSet, op: &InverseOperator) -> Result<VoxelVolume> {
    let (geom, _) = sphere_geometry(p)?;
    let grid = ParallelGrid::covering(
        *geom.ball(),
        op.rebin.directions,
        op.rebin.du_fraction * op.grid.voxel_size,
    )?;
    let parallel = rebin_to_parallel(p, &grid)?;
    let inner = InverseOperator { kind: InverseKind::FourierSlice, ..op.clone() };
    inner.apply(&parallel)
}
