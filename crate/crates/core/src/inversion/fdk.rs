//! Feldkamp-Davis-Kress reconstruction for circular orbits.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{bilinear, InverseOperator};
use crate::error::{Error, Result};
use crate::fft::{fft_rows, C64};
use crate::geometry::SourceKind;
use crate::projector::ProjectionSet;
use crate::volume::VoxelVolume;

/// Frequency response of the band-limited ramp kernel
/// `h(0) = 1/(4 tau^2)`, `h(k odd) = -1/(k pi tau)^2`, times the window.
fn ramp_response(len: usize, tau: f64, op: &InverseOperator) -> Vec<C64> {
    let mut h = vec![C64::new(0.0, 0.0); len];
    h[0] = C64::new(1.0 / (4.0 * tau * tau), 0.0);
    for k in 1..len / 2 {
        if k % 2 == 1 {
            let v = -1.0 / ((k as f64 * PI * tau).powi(2));
            h[k] = C64::new(v, 0.0);
            h[len - k] = C64::new(v, 0.0);
        }
    }
    fft_rows(&mut h, len, false);
    for (k, v) in h.iter_mut().enumerate() {
        let f = crate::fft::signed_index(k, len).unsigned_abs() as f64 / (len as f64 / 2.0);
        *v = C64::new(v.re * tau * op.filter.response(f.min(1.0 - 1e-12)), 0.0);
    }
    h
}

/// Cosine-weighted, row-filtered, distance-weighted backprojection.
pub fn fdk(p: &ProjectionSet, op: &InverseOperator) -> Result<VoxelVolume> {
    let geom = p
        .acquisition()
        .cone()
        .filter(|g| matches!(g.kind(), SourceKind::Circle { .. }))
        .ok_or_else(|| Error::Inversion("FDK needs circular-orbit cone-beam data".into()))?;
    let SourceKind::Circle { radius, positions, .. } = *geom.kind() else { unreachable!() };
    let det = *geom.detector();
    let ball = *geom.ball();
    let sources = geom.sample_sources();
    let (rows, cols) = (det.rows, det.cols);
    // virtual detector through the rotation center
    let mag = radius / det.sdd;
    let tau = det.spacing * mag;
    let padded = (2 * cols).next_power_of_two();
    let response = ramp_response(padded, tau, op);

    let filtered: Vec<Vec<f64>> = (0..sources.len())
        .into_par_iter()
        .map(|v| {
            let view = p.view(v);
            let mut out = vec![0.0; rows * cols];
            let mut line = vec![C64::new(0.0, 0.0); padded];
            for r in 0..rows {
                let q = (r as f64 - (rows as f64 - 1.0) / 2.0) * tau;
                line.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
                for c in 0..cols {
                    let pp = (c as f64 - (cols as f64 - 1.0) / 2.0) * tau;
                    let w = radius / (radius * radius + pp * pp + q * q).sqrt();
                    line[c] = C64::new(view[r * cols + c] * w, 0.0);
                }
                fft_rows(&mut line, padded, false);
                for (x, h) in line.iter_mut().zip(&response) {
                    *x *= h.re;
                }
                fft_rows(&mut line, padded, true);
                for c in 0..cols {
                    out[r * cols + c] = line[c].re / padded as f64;
                }
            }
            out
        })
        .collect();

    let out = op.grid.zeros(&ball)?;
    let n = out.n();
    let d_beta = 2.0 * PI / positions as f64;
    let r2 = ball.radius * ball.radius * (1.0 + 1e-12);
    let mut values = vec![0.0; n * n * n];
    values.par_chunks_mut(n * n).enumerate().for_each(|(k, slab)| {
        let pts: Vec<(usize, crate::geometry::Vec3)> = (0..n * n)
            .filter_map(|ij| {
                let x = out.voxel_center(ij % n, ij / n, k) - ball.center;
                (x.norm2() <= r2).then_some((ij, x))
            })
            .collect();
        for (s, q) in sources.iter().zip(&filtered) {
            let axis = s.frame.axis;
            for &(ij, x) in &pts {
                // distance from the source to x along the central ray
                let u = radius + x.dot(axis);
                let pp = radius * x.dot(s.frame.eu) / u;
                let qq = radius * x.dot(s.frame.ev) / u;
                let col = pp / tau + (cols as f64 - 1.0) / 2.0;
                let row = qq / tau + (rows as f64 - 1.0) / 2.0;
                slab[ij] += radius * radius / (u * u) * bilinear(q, rows, cols, row, col);
            }
        }
        for v in slab.iter_mut() {
            *v *= 0.5 * d_beta;
        }
    });
    Ok(out.with_values(values)?.restricted_to(&ball))
}
