//! Fixed-point ROI reconstruction `f_{j+1} = f_0 + U f_j` with
//! `U = sigma Z tau (D - D_C)` and `f_0 = sigma Z tau D_C f`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ball;
use crate::inversion::InverseOperator;
use crate::phantom::SampledVolume;
use crate::projector::{forward, truncate, Acquisition, ProjectionSet};
use crate::regularize::{mollify, wavelet_shrink, MollifierKernel, WaveletConfig};
use crate::volume::VoxelVolume;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    /// Stop when the ROI residual drops below `b`.
    Absolute,
    /// Stop when the ROI residual drops below `b * ||f_j||_{L1(C)}`.
    #[default]
    Relative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IterConfig {
    pub b: f64,
    pub max_iter: usize,
    pub stopping: StoppingMode,
    pub mollifier: MollifierKernel,
    pub wavelet: WaveletConfig,
    /// Apply wavelet shrinkage after every inversion.
    pub use_image_regularizer: bool,
    /// Ray sampling step inside the loop, as a fraction of the voxel size.
    pub step_fraction: f64,
}

impl Default for IterConfig {
    fn default() -> Self {
        IterConfig {
            b: 0.02,
            max_iter: 40,
            stopping: StoppingMode::Relative,
            mollifier: MollifierKernel::default(),
            wavelet: WaveletConfig::default(),
            use_image_regularizer: true,
            step_fraction: 0.5,
        }
    }
}

impl IterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::Roi(format!("stopping tolerance must be positive, got {}", self.b)));
        }
        if self.max_iter == 0 {
            return Err(Error::Roi("max_iter must be at least 1".into()));
        }
        if !(self.step_fraction > 0.0) {
            return Err(Error::Roi("ray step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub iterations_run: usize,
    /// `||f_{j+1} - f_j||_{L1(C)}` per iteration.
    pub residuals: Vec<f64>,
    /// Stopping threshold in force at each iteration.
    pub thresholds: Vec<f64>,
    pub converged: bool,
    pub rl1: Option<f64>,
    /// Geometric mean of successive residual ratios.
    pub contraction: Option<f64>,
}

fn non_finite<T>(r: Result<T>, iteration: usize, stage: &'static str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Volume(ref m) | Error::Projector(ref m) if m.contains("non-finite") => {
            Error::NonFinite { iteration, stage }
        }
        other => other,
    })
}

/// The operators of the iteration for one acquisition, inverse, and ROI.
pub struct RoiOperator<'a> {
    acquisition: &'a Acquisition,
    z: &'a InverseOperator,
    roi: Ball,
    cfg: &'a IterConfig,
    /// Rays that miss the ROI.
    outside: Vec<bool>,
}

impl<'a> RoiOperator<'a> {
    pub fn new(
        acquisition: &'a Acquisition,
        z: &'a InverseOperator,
        roi: Ball,
        cfg: &'a IterConfig,
    ) -> Result<RoiOperator<'a>> {
        cfg.validate()?;
        z.check_compatible(acquisition)?;
        let probe = truncate(&ProjectionSet::zeros(acquisition.clone()), &roi)?;
        let outside = probe.mask().iter().map(|m| !m).collect();
        Ok(RoiOperator { acquisition, z, roi, cfg, outside })
    }

    pub fn roi(&self) -> &Ball {
        &self.roi
    }

    /// `U = 0` exactly when every ray meets the ROI.
    pub fn is_trivial(&self) -> bool {
        !self.outside.iter().any(|&o| o)
    }

    /// `sigma Z tau p`, or `Z tau p` without the image regularizer.
    pub fn regularized_inverse(&self, p: &ProjectionSet, iteration: usize) -> Result<VoxelVolume> {
        let smoothed = mollify(p, &self.cfg.mollifier);
        let inv = non_finite(self.z.apply(&smoothed), iteration, "inverse")?;
        if self.cfg.use_image_regularizer {
            non_finite(wavelet_shrink(&inv, &self.cfg.wavelet), iteration, "wavelet")
        } else {
            Ok(inv)
        }
    }

    /// `Y_C f = (D - D_C) f`, evaluated only on rays that miss the ROI.
    pub fn complement_projection(&self, f: &VoxelVolume, iteration: usize) -> Result<ProjectionSet> {
        let sampled = SampledVolume { volume: f, step_fraction: self.cfg.step_fraction };
        non_finite(forward(&sampled, self.acquisition, Some(&self.outside)), iteration, "forward")
    }

    /// `U f`.
    pub fn apply_u(&self, f: &VoxelVolume, iteration: usize) -> Result<VoxelVolume> {
        if self.is_trivial() {
            return Ok(VoxelVolume::zeros_like(f));
        }
        let y = self.complement_projection(f, iteration)?;
        self.regularized_inverse(&y, iteration)
    }

    /// L1 norm over voxel centers in the closed ROI.
    pub fn roi_l1(&self, f: &VoxelVolume) -> f64 {
        roi_sum(f, &self.roi, |v| v.abs()) * f.voxel_size().powi(3)
    }
}

fn roi_sum(f: &VoxelVolume, roi: &Ball, g: impl Fn(f64) -> f64) -> f64 {
    let n = f.n();
    let r2 = roi.radius * roi.radius * (1.0 + 1e-12);
    let mut acc = 0.0;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if (f.voxel_center(i, j, k) - roi.center).norm2() <= r2 {
                    acc += g(f.get(i, j, k));
                }
            }
        }
    }
    acc
}

/// Runs the iteration on truncated data `g` (its mask must come from `roi`).
pub fn roi_reconstruct(
    g: &ProjectionSet,
    z: &InverseOperator,
    roi: &Ball,
    cfg: &IterConfig,
    ground_truth: Option<&VoxelVolume>,
) -> Result<(VoxelVolume, ReconReport)> {
    match g.roi() {
        Some(r) if r == roi => {}
        Some(_) => return Err(Error::Roi("data were truncated to a different ROI".into())),
        None if g.mask().iter().all(|&m| m) && roi == g.acquisition().ball() => {}
        None => return Err(Error::Roi("data carry no ROI mask".into())),
    }
    let op = RoiOperator::new(g.acquisition(), z, *roi, cfg)?;
    let f0 = op.regularized_inverse(g, 0)?;
    let b = *g.acquisition().ball();
    let mut residuals = Vec::new();
    let mut thresholds = Vec::new();
    let mut converged = false;
    let mut f = f0.clone();
    for j in 0..cfg.max_iter {
        let next = non_finite(f0.axpy(1.0, &op.apply_u(&f, j + 1)?), j + 1, "update")?.restricted_to(&b);
        let diff = next.axpy(-1.0, &f)?;
        let residual = op.roi_l1(&diff);
        if !residual.is_finite() {
            return Err(Error::NonFinite { iteration: j + 1, stage: "residual" });
        }
        let thr = match cfg.stopping {
            StoppingMode::Absolute => cfg.b,
            StoppingMode::Relative => cfg.b * op.roi_l1(&f),
        };
        residuals.push(residual);
        thresholds.push(thr);
        f = next;
        if residual <= thr {
            converged = true;
            break;
        }
    }
    let rl1 = match ground_truth {
        Some(t) => Some(rl1_error(t, &f, roi)?),
        None => None,
    };
    let report = ReconReport {
        iterations_run: residuals.len(),
        contraction: contraction_from(&residuals),
        residuals,
        thresholds,
        converged,
        rl1,
    };
    Ok((f, report))
}

fn contraction_from(residuals: &[f64]) -> Option<f64> {
    if residuals.len() < 2 {
        return None;
    }
    let mut log_sum = 0.0;
    for w in residuals.windows(2) {
        if w[0] <= 0.0 || w[1] <= 0.0 {
            return Some(0.0);
        }
        log_sum += (w[1] / w[0]).ln();
    }
    Some((log_sum / (residuals.len() - 1) as f64).exp())
}

/// `||f - fhat||_{L1(C)} / ||f||_{L1(C)}` over voxel centers in the closed ROI.
pub fn rl1_error(f: &VoxelVolume, fhat: &VoxelVolume, roi: &Ball) -> Result<f64> {
    f.check_grid(fhat)?;
    let diff = fhat.axpy(-1.0, f)?;
    let num = roi_sum(&diff, roi, f64::abs);
    let den = roi_sum(f, roi, f64::abs);
    if den == 0.0 {
        return Err(Error::Roi("reference density vanishes on the ROI".into()));
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// Geometric mean of successive sup-norm ratios over all trials.
    pub factor: f64,
    pub per_trial_max: Vec<f64>,
}

/// Power-iteration estimate of `||U||` in the sup norm from random
/// wavelet-smoothed volumes supported in the ball.
pub fn estimate_contraction(
    acquisition: &Acquisition,
    z: &InverseOperator,
    roi: &Ball,
    cfg: &IterConfig,
    trials: usize,
    steps: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if trials < 3 {
        return Err(Error::Roi("at least three trials are required".into()));
    }
    let op = RoiOperator::new(acquisition, z, *roi, cfg)?;
    let ball = *acquisition.ball();
    let template = z.grid.zeros(&ball)?;
    let mut log_sum = 0.0;
    let mut count = 0usize;
    let mut zero = false;
    let mut per_trial_max = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let values = (0..template.values().len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut v = wavelet_shrink(&template.with_values(values)?.restricted_to(&ball), &cfg.wavelet)?
            .restricted_to(&ball);
        let mut worst: f64 = 0.0;
        for step in 0..steps.max(1) {
            let before = v.max_abs();
            if before == 0.0 {
                zero = true;
                break;
            }
            let next = op.apply_u(&v, step + 1)?;
            let ratio = next.max_abs() / before;
            worst = worst.max(ratio);
            if ratio == 0.0 {
                zero = true;
                break;
            }
            log_sum += ratio.ln();
            count += 1;
            v = next;
        }
        per_trial_max.push(worst);
    }
    let factor = if zero || count == 0 { 0.0 } else { (log_sum / count as f64).exp() };
    Ok(ContractionEstimate { factor, per_trial_max })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius: f64,
    pub rl1: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub epsilon: f64,
    /// Smallest radius whose RL1 is at most `epsilon`.
    pub critical_radius: Option<f64>,
}

/// Reconstructs concentric ROIs of the given radii from full data and
/// tabulates accuracy.
pub fn critical_radius_sweep(
    full: &ProjectionSet,
    truth: &VoxelVolume,
    z: &InverseOperator,
    radii: &[f64],
    epsilon: f64,
    cfg: &IterConfig,
) -> Result<SweepTable> {
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Roi("sweep radii must be sorted ascending".into()));
    }
    let b = *full.acquisition().ball();
    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let roi = Ball::new(b.center, r)?;
        let run = truncate(full, &roi).and_then(|g| roi_reconstruct(&g, z, &roi, cfg, Some(truth)));
        rows.push(match run {
            Ok((_, rep)) => SweepRow {
                radius: r,
                rl1: rep.rl1,
                iterations: rep.iterations_run,
                converged: rep.converged,
                error: None,
            },
            Err(e @ (Error::NonFinite { .. } | Error::Roi(_))) => SweepRow {
                radius: r,
                rl1: None,
                iterations: 0,
                converged: false,
                error: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        });
    }
    Ok(table_from_rows(rows, epsilon))
}

pub fn table_from_rows(rows: Vec<SweepRow>, epsilon: f64) -> SweepTable {
    let critical_radius = rows.iter().find(|r| r.rl1.is_some_and(|e| e <= epsilon)).map(|r| r.radius);
    SweepTable { rows, epsilon, critical_radius }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonInverseCheck {
    pub epsilon: f64,
    /// `||f - Z_C D_C f||_inf / ||f||_inf` over the ball.
    pub measured: f64,
    pub pass: bool,
}

/// Runs `D_C` then the ROI iteration on `f` and compares in the sup norm.
pub fn epsilon_inverse_check(
    f: &VoxelVolume,
    acquisition: &Acquisition,
    z: &InverseOperator,
    roi: &Ball,
    cfg: &IterConfig,
    epsilon: f64,
) -> Result<EpsilonInverseCheck> {
    let sampled = SampledVolume { volume: f, step_fraction: cfg.step_fraction };
    let full = forward(&sampled, acquisition, None)?;
    let g = truncate(&full, roi)?;
    let reference = f.max_abs();
    if reference == 0.0 {
        return Err(Error::Roi("reference density is identically zero".into()));
    }
    let measured = match roi_reconstruct(&g, z, roi, cfg, None) {
        Ok((fhat, _)) => {
            let ball = *acquisition.ball();
            fhat.axpy(-1.0, f)?.restricted_to(&ball).max_abs() / reference
        }
        Err(Error::NonFinite { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(EpsilonInverseCheck { epsilon, measured, pass: measured <= epsilon })
}
