//! Mid-plane images and a mid-row profile for quick inspection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use conetomo::VoxelVolume;

use crate::Failure;

const PLANES: [&str; 3] = ["xy", "xz", "yz"];

pub fn outputs(dir: &Path, stem: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = PLANES.iter().map(|p| dir.join(format!("{stem}_{p}.png"))).collect();
    v.push(dir.join(format!("{stem}_profile.csv")));
    v
}

/// 8-bit linear window over the volume's value range.
fn to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.iter().map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn write_slices(v: &VoxelVolume, dir: &Path, stem: &str) -> Result<(), Failure> {
    let n = v.n();
    let m = n / 2;
    let (lo, hi) = v.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let plane = |which: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                out.push(match which {
                    0 => v.get(c, r, m),
                    1 => v.get(c, m, r),
                    _ => v.get(m, c, r),
                });
            }
        }
        out
    };
    let paths = outputs(dir, stem);
    for (k, path) in paths.iter().take(3).enumerate() {
        let img = image::GrayImage::from_raw(n as u32, n as u32, to_gray(&plane(k), lo, hi))
            .ok_or_else(|| Failure::Domain("image buffer size mismatch".into()))?;
        img.save(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    }
    let mut csv = String::from("x,value\n");
    let s = v.voxel_size();
    let x0 = v.origin().x;
    for i in 0..n {
        let _ = writeln!(csv, "{:.4},{:.6}", x0 + (i as f64 + 0.5) * s, v.get(i, m, m));
    }
    std::fs::write(&paths[3], csv)?;
    Ok(())
}
