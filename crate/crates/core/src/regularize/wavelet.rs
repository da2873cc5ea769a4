use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VoxelVolume;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const NORM: f64 = 5.656_854_249_492_380_6; // 4 * sqrt(2)

/// Orthonormal Daubechies-4 scaling filter.
pub const DAUB4: [f64; 4] =
    [(1.0 + SQRT3) / NORM, (3.0 + SQRT3) / NORM, (3.0 - SQRT3) / NORM, (1.0 - SQRT3) / NORM];

const WAVELET: [f64; 4] = [DAUB4[3], -DAUB4[2], DAUB4[1], -DAUB4[0]];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkMode {
    /// Zero coefficients below the threshold.
    #[default]
    Hard,
    /// `a (1 - exp(-(a/thr)^2))`, a smooth version of hard thresholding.
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveletConfig {
    pub levels: usize,
    /// Fraction of detail coefficients kept at each scale.
    pub keep_fraction: f64,
    pub mode: ShrinkMode,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig { levels: 1, keep_fraction: 0.1, mode: ShrinkMode::Hard }
    }
}

impl WaveletConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Regularize("at least one wavelet level is required".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Regularize(format!(
                "keep fraction must lie in (0, 1], got {}",
                self.keep_fraction
            )));
        }
        check_levels(n, self.levels)?;
        let log2 = usize::BITS - 1 - n.leading_zeros();
        if self.levels + 2 > log2 as usize {
            return Err(Error::Regularize(format!(
                "{} levels exceed log2({n}) - 2",
                self.levels
            )));
        }
        Ok(())
    }
}

fn check_levels(n: usize, levels: usize) -> Result<()> {
    if levels == 0 || n % (1 << levels) != 0 || n >> levels < 2 {
        return Err(Error::Regularize(format!("grid side {n} is not divisible by 2^{levels}")));
    }
    Ok(())
}

fn forward_line(x: &[f64], out: &mut [f64]) {
    let len = x.len();
    let half = len / 2;
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..4 {
            let v = x[(2 * k + j) % len];
            a += DAUB4[j] * v;
            d += WAVELET[j] * v;
        }
        out[k] = a;
        out[half + k] = d;
    }
}

fn inverse_line(c: &[f64], out: &mut [f64]) {
    let len = c.len();
    let half = len / 2;
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..half {
        let (a, d) = (c[k], c[half + k]);
        for j in 0..4 {
            out[(2 * k + j) % len] += DAUB4[j] * a + WAVELET[j] * d;
        }
    }
}

/// Applies a 1D transform along `axis` of the low `len^3` corner of an
/// `n^3` array.
fn transform_axis(data: &mut [f64], n: usize, len: usize, axis: usize, inverse: bool) {
    let stride = [1, n, n * n][axis];
    let (sa, sb) = match axis {
        0 => (n, n * n),
        1 => (1, n * n),
        _ => (1, n),
    };
    let lines: Vec<(usize, Vec<f64>)> = (0..len * len)
        .into_par_iter()
        .map(|ab| {
            let base = (ab % len) * sa + (ab / len) * sb;
            let line: Vec<f64> = (0..len).map(|t| data[base + t * stride]).collect();
            let mut out = vec![0.0; len];
            if inverse {
                inverse_line(&line, &mut out);
            } else {
                forward_line(&line, &mut out);
            }
            (base, out)
        })
        .collect();
    for (base, line) in lines {
        for (t, v) in line.into_iter().enumerate() {
            data[base + t * stride] = v;
        }
    }
}

/// Separable periodic 3D transform in Mallat layout: after `levels` steps
/// the approximation occupies the low `n / 2^levels` corner.
pub fn dwt3(values: &[f64], n: usize, levels: usize) -> Result<Vec<f64>> {
    check_levels(n, levels)?;
    if values.len() != n * n * n {
        return Err(Error::Regularize("coefficient array does not match n^3".into()));
    }
    let mut data = values.to_vec();
    let mut len = n;
    for _ in 0..levels {
        for axis in 0..3 {
            transform_axis(&mut data, n, len, axis, false);
        }
        len /= 2;
    }
    Ok(data)
}

/// Inverse of [`dwt3`].
pub fn idwt3(coeffs: &[f64], n: usize, levels: usize) -> Result<Vec<f64>> {
    check_levels(n, levels)?;
    if coeffs.len() != n * n * n {
        return Err(Error::Regularize("coefficient array does not match n^3".into()));
    }
    let mut data = coeffs.to_vec();
    let mut len = n >> (levels - 1);
    for _ in 0..levels {
        for axis in (0..3).rev() {
            transform_axis(&mut data, n, len, axis, true);
        }
        len *= 2;
    }
    Ok(data)
}

/// Detail level of coefficient `(i, j, k)`: 1 is the finest, 0 the
/// coarsest approximation.
fn level_of(i: usize, j: usize, k: usize, n: usize, levels: usize) -> usize {
    let m = i.max(j).max(k);
    let mut len = n;
    for level in 1..=levels {
        if m >= len / 2 {
            return level;
        }
        len /= 2;
    }
    0
}

fn level_map(n: usize, levels: usize) -> Vec<u8> {
    let mut map = vec![0u8; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                map[(k * n + j) * n + i] = level_of(i, j, k, n, levels) as u8;
            }
        }
    }
    map
}

/// Per-level thresholds (index 0 unused): the magnitude below which the
/// discarded `1 - keep_fraction` share of each level's coefficients falls.
fn thresholds_from(coeffs: &[f64], map: &[u8], cfg: &WaveletConfig) -> Vec<f64> {
    let mut out = vec![0.0; cfg.levels + 1];
    for (level, thr) in out.iter_mut().enumerate().skip(1) {
        let mut mags: Vec<f64> = coeffs
            .iter()
            .zip(map)
            .filter(|(_, &l)| l as usize == level)
            .map(|(c, _)| c.abs())
            .collect();
        mags.sort_by(f64::total_cmp);
        let idx = ((1.0 - cfg.keep_fraction) * mags.len() as f64).floor() as usize;
        *thr = if idx >= mags.len() { f64::INFINITY } else { mags[idx] };
    }
    out
}

fn apply_thresholds(coeffs: &mut [f64], map: &[u8], thr: &[f64], mode: ShrinkMode) {
    for (c, &l) in coeffs.iter_mut().zip(map) {
        if l == 0 {
            continue;
        }
        let t = thr[l as usize];
        match mode {
            ShrinkMode::Hard => {
                if c.abs() < t {
                    *c = 0.0;
                }
            }
            ShrinkMode::Smooth => {
                if t > 0.0 {
                    *c *= 1.0 - (-(*c / t).powi(2)).exp();
                }
            }
        }
    }
}

/// Thresholds that [`wavelet_shrink`] would use for `values`.
pub fn shrink_thresholds(values: &[f64], n: usize, cfg: &WaveletConfig) -> Result<Vec<f64>> {
    cfg.validate(n)?;
    let coeffs = dwt3(values, n, cfg.levels)?;
    Ok(thresholds_from(&coeffs, &level_map(n, cfg.levels), cfg))
}

/// Thresholds detail coefficients of a raw `n^3` array, either at the
/// per-level quantiles or at the supplied thresholds.
pub fn shrink_values(
    values: &[f64],
    n: usize,
    cfg: &WaveletConfig,
    thresholds: Option<&[f64]>,
) -> Result<Vec<f64>> {
    cfg.validate(n)?;
    let mut coeffs = dwt3(values, n, cfg.levels)?;
    let map = level_map(n, cfg.levels);
    let thr = match thresholds {
        Some(t) if t.len() == cfg.levels + 1 => t.to_vec(),
        Some(_) => return Err(Error::Regularize("one threshold per level is required".into())),
        None => thresholds_from(&coeffs, &map, cfg),
    };
    apply_thresholds(&mut coeffs, &map, &thr, cfg.mode);
    idwt3(&coeffs, n, cfg.levels)
}

/// Image-space regularizer `sigma`.
pub fn wavelet_shrink(v: &VoxelVolume, cfg: &WaveletConfig) -> Result<VoxelVolume> {
    v.with_values(shrink_values(v.values(), v.n(), cfg, None)?)
}

/// [`wavelet_shrink`] with fixed thresholds.
pub fn wavelet_shrink_with(v: &VoxelVolume, cfg: &WaveletConfig, thresholds: &[f64]) -> Result<VoxelVolume> {
    v.with_values(shrink_values(v.values(), v.n(), cfg, Some(thresholds))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_orthonormal() {
        let hh: f64 = DAUB4.iter().map(|h| h * h).sum();
        let gg: f64 = WAVELET.iter().map(|g| g * g).sum();
        let hg: f64 = DAUB4.iter().zip(&WAVELET).map(|(h, g)| h * g).sum();
        assert!((hh - 1.0).abs() < 1e-15 && (gg - 1.0).abs() < 1e-15 && hg.abs() < 1e-15);
        assert!((DAUB4.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-15);
        // two vanishing moments
        assert!(WAVELET.iter().sum::<f64>().abs() < 1e-15);
        assert!(WAVELET.iter().enumerate().map(|(j, g)| j as f64 * g).sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn levels_are_validated() {
        assert!(WaveletConfig::default().validate(64).is_ok());
        assert!(WaveletConfig { levels: 5, ..Default::default() }.validate(64).is_err());
        assert!(WaveletConfig { keep_fraction: 0.0, ..Default::default() }.validate(64).is_err());
        assert!(dwt3(&vec![0.0; 24 * 24 * 24], 24, 4).is_err());
    }

    #[test]
    fn level_layout() {
        assert_eq!(level_of(40, 0, 0, 64, 3), 1);
        assert_eq!(level_of(20, 3, 0, 64, 3), 2);
        assert_eq!(level_of(9, 3, 2, 64, 3), 3);
        assert_eq!(level_of(7, 7, 7, 64, 3), 0);
    }
}
