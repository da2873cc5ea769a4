//! Property checks shared by the property suite and the acceptance run.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use conetomo::geometry::{Detector, SourceKind};
use conetomo::inversion::{fdk, GridSpec};
use conetomo::projector::{complement, forward, truncate};
use conetomo::regularize::{dwt3, idwt3, mollify};
use conetomo::roi_iter::{estimate_contraction, roi_reconstruct, RoiOperator};
use conetomo::{
    Acquisition, Ball, InverseKind, InverseOperator, IterConfig, MollifierKernel, ProjectionSet, SourceGeometry, Vec3,
    VoxelVolume,
};

pub const N: usize = 16;

pub fn ball() -> Ball {
    Ball::new(Vec3::ZERO, N as f64 / 2.0).unwrap()
}

pub fn circle(positions: usize) -> Acquisition {
    let b = ball();
    let det = Detector::covering(&b, 40.0, 60.0, 1.0);
    Acquisition::Cone(
        SourceGeometry::new(SourceKind::Circle { radius: 40.0, normal: Vec3::Z, positions }, b, det).unwrap(),
    )
}

fn volume_from(values: Vec<f64>) -> VoxelVolume {
    VoxelVolume::zeros(N, 1.0).unwrap().with_values(values).unwrap().restricted_to(&ball())
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sup(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

pub fn partition_inputs() -> impl Strategy<Value = (f64, f64, f64, Vec<f64>)> {
    (0.05f64..0.95, -0.3f64..0.3, -0.3f64..0.3, values(N * N * N))
}

/// `D_C` and `D - D_C` split every ray of the full data exactly.
pub fn truncation_partitions((frac, dx, dz, v): (f64, f64, f64, Vec<f64>)) -> Result<(), TestCaseError> {
    let b = ball();
    let offset = Vec3::new(dx, 0.0, dz) * (b.radius * (1.0 - frac));
    let roi = Ball::new(b.center + offset, frac * b.radius).unwrap();
    let full = forward(&volume_from(v), &circle(12), None).unwrap();
    let kept = truncate(&full, &roi).unwrap();
    let rest = complement(&full, &roi).unwrap();
    for i in 0..full.data().len() {
        prop_assert!(kept.mask()[i] != rest.mask()[i]);
        prop_assert_eq!(kept.data()[i] + rest.data()[i], full.data()[i]);
        if !kept.mask()[i] {
            prop_assert_eq!(kept.data()[i], 0.0);
        }
    }
    Ok(())
}

pub fn linearity_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
    (values(N * N * N), values(N * N * N), -3.0f64..3.0, -3.0f64..3.0)
}

pub fn operators_are_linear((a, b, alpha, beta): (Vec<f64>, Vec<f64>, f64, f64)) -> Result<(), TestCaseError> {
    let acq = circle(12);
    let (fa, fb) = (volume_from(a), volume_from(b));
    let mix = fa.scaled(alpha).axpy(beta, &fb).unwrap();
    let pa = forward(&fa, &acq, None).unwrap();
    let pb = forward(&fb, &acq, None).unwrap();
    let pm = forward(&mix, &acq, None).unwrap();
    let lin: Vec<f64> = pa.data().iter().zip(pb.data()).map(|(x, y)| alpha * x + beta * y).collect();
    prop_assert!(sup_diff(pm.data(), &lin) <= 1e-9 * sup(&lin).max(1.0));

    let op = InverseOperator::new(InverseKind::Fdk, GridSpec { n: N, voxel_size: 1.0 });
    let za = fdk(&pa, &op).unwrap();
    let zb = fdk(&pb, &op).unwrap();
    let zm = fdk(&pm, &op).unwrap();
    let lin = za.scaled(alpha).axpy(beta, &zb).unwrap();
    prop_assert!(sup_diff(zm.values(), lin.values()) <= 1e-9 * lin.max_abs().max(1.0));

    let k = MollifierKernel::default();
    let ma = mollify(&pa, &k);
    let mb = mollify(&pb, &k);
    let mm = mollify(&pm, &k);
    let lin: Vec<f64> = ma.data().iter().zip(mb.data()).map(|(x, y)| alpha * x + beta * y).collect();
    prop_assert!(sup_diff(mm.data(), &lin) <= 1e-9 * sup(&lin).max(1.0));
    Ok(())
}

pub fn wavelet_inputs() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (values(N * N * N), 1usize..=3)
}

pub fn wavelet_reconstruction_is_perfect((v, levels): (Vec<f64>, usize)) -> Result<(), TestCaseError> {
    let c = dwt3(&v, N, levels).unwrap();
    let back = idwt3(&c, N, levels).unwrap();
    prop_assert!(sup_diff(&v, &back) <= 1e-9);
    // orthogonal transform
    let e0: f64 = v.iter().map(|x| x * x).sum();
    let e1: f64 = c.iter().map(|x| x * x).sum();
    prop_assert!((e0 - e1).abs() <= 1e-9 * e0);
    Ok(())
}

pub fn mollifier_inputs() -> impl Strategy<Value = (u64, u32)> {
    (0u64..1000, 4u32..=12)
}

pub fn mollifier_preserves_mass_and_contracts((seed, scale): (u64, u32)) -> Result<(), TestCaseError> {
    let acq = circle(3);
    let (views, rows, cols) = ProjectionSet::zeros(acq.clone()).shape();
    let k = MollifierKernel::new(scale).unwrap();
    let h = (12.0 / scale as f64).floor() as usize;
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    // interior-supported views: nothing leaks past the detector edge
    let mut data = vec![0.0; views * rows * cols];
    for v in 0..views {
        for r in h..rows - h {
            for c in h..cols - h {
                data[(v * rows + r) * cols + c] = next();
            }
        }
    }
    let p = ProjectionSet::new(acq, data).unwrap();
    let m = mollify(&p, &k);
    for v in 0..views {
        let before: f64 = p.view(v).iter().sum();
        let after: f64 = m.view(v).iter().sum();
        let scale_ref: f64 = p.view(v).iter().map(|x| x.abs()).sum();
        prop_assert!((before - after).abs() <= 1e-9 * scale_ref);
    }
    prop_assert!(m.max_abs() <= p.max_abs() * (1.0 + 1e-12));
    Ok(())
}

fn smooth_truth() -> VoxelVolume {
    VoxelVolume::from_fn(N, 1.0, |p| {
        (-(p.norm2()) / 18.0).exp() + 0.3 * (-((p - Vec3::new(2.0, -1.0, 1.0)).norm2()) / 4.0).exp()
    })
    .unwrap()
    .restricted_to(&ball())
}

fn fdk_operator() -> InverseOperator {
    InverseOperator::new(InverseKind::Fdk, GridSpec { n: N, voxel_size: 1.0 })
}

/// With C = B the complement is empty, so one step returns `f_0`.
pub fn whole_ball_roi_returns_the_plain_inverse() -> Result<(), String> {
    let acq = circle(48);
    let z = fdk_operator();
    let cfg = IterConfig::default();
    let full = forward(&smooth_truth(), &acq, None).unwrap();
    let op = RoiOperator::new(&acq, &z, ball(), &cfg).unwrap();
    let f0 = op.regularized_inverse(&full, 0).unwrap();
    let (f, rep) = roi_reconstruct(&full, &z, &ball(), &cfg, None).unwrap();
    if !(rep.converged && rep.iterations_run == 1) {
        return Err(format!("expected one converged step, got {rep:?}"));
    }
    if f.values() != f0.restricted_to(&ball()).values() {
        return Err("iterate differs from the plain inverse".into());
    }
    Ok(())
}

/// The returned iterate satisfies `f = f_0 + U f` to the stopping tolerance.
pub fn converged_iterate_is_a_fixed_point() -> Result<(), String> {
    let acq = circle(48);
    let z = fdk_operator();
    let cfg = IterConfig { b: 1e-3, ..IterConfig::default() };
    let roi = ball().scaled(0.8).unwrap();
    let full = forward(&smooth_truth(), &acq, None).unwrap();
    let g = truncate(&full, &roi).unwrap();
    let (f, rep) = roi_reconstruct(&g, &z, &roi, &cfg, None).unwrap();
    if !rep.converged {
        return Err(format!("no convergence: residuals {:?}", rep.residuals));
    }
    let op = RoiOperator::new(&acq, &z, roi, &cfg).unwrap();
    let f0 = op.regularized_inverse(&g, 0).unwrap();
    let next = f0.axpy(1.0, &op.apply_u(&f, rep.iterations_run + 1).unwrap()).unwrap().restricted_to(&ball());
    let gap = op.roi_l1(&next.axpy(-1.0, &f).unwrap());
    let last = *rep.residuals.last().unwrap();
    if gap > last * (1.0 + 1e-6) || gap > cfg.b * op.roi_l1(&f) * 1.5 {
        return Err(format!("fixed-point gap {gap} against last residual {last}"));
    }
    Ok(())
}

pub fn reruns_are_byte_identical() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let acq = circle(24);
    let z = fdk_operator();
    let cfg = IterConfig { max_iter: 3, ..IterConfig::default() };
    let roi = ball().scaled(0.6).unwrap();
    let run = |tag: &str| {
        let full = forward(&smooth_truth(), &acq, None).unwrap();
        let g = truncate(&full, &roi).unwrap();
        let (f, rep) = roi_reconstruct(&g, &z, &roi, &cfg, Some(&smooth_truth())).unwrap();
        let pp = dir.path().join(format!("p{tag}.raw"));
        let fp = dir.path().join(format!("f{tag}.raw"));
        g.write_raw(&pp).unwrap();
        f.write_raw(&fp).unwrap();
        let est = estimate_contraction(&acq, &z, &roi, &cfg, 3, 2, 7).unwrap();
        (
            std::fs::read(&pp).unwrap(),
            std::fs::read(&fp).unwrap(),
            serde_json::to_string(&rep).unwrap(),
            est.factor.to_bits(),
        )
    };
    if run("a") != run("b") {
        return Err("two identical runs produced different bytes".into());
    }
    Ok(())
}
