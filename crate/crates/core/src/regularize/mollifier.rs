use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::ProjectionSet;

/// Discrete approximation of the identity on the detector grid: the bump
/// `(1 - (r/rho)^2)^2` with radius `rho = 12 / scale` pixels, normalized to
/// unit sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct MollifierKernel {
    scale: u32,
    half: usize,
}

#[derive(Serialize, Deserialize)]
struct RawKernel {
    scale: u32,
}

impl TryFrom<RawKernel> for MollifierKernel {
    type Error = Error;
    fn try_from(r: RawKernel) -> Result<Self> {
        MollifierKernel::new(r.scale)
    }
}

impl From<MollifierKernel> for RawKernel {
    fn from(k: MollifierKernel) -> Self {
        RawKernel { scale: k.scale }
    }
}

impl Default for MollifierKernel {
    /// Spans three pixels per axis, with the corner weights vanishing.
    fn default() -> Self {
        MollifierKernel::new(10).expect("valid scale")
    }
}

impl MollifierKernel {
    pub fn new(scale: u32) -> Result<MollifierKernel> {
        if scale == 0 {
            return Err(Error::Regularize("mollifier scale must be positive".into()));
        }
        let rho = 12.0 / scale as f64;
        Ok(MollifierKernel { scale, half: rho.floor() as usize })
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn radius(&self) -> f64 {
        12.0 / self.scale as f64
    }

    /// Weights on `(2h+1)^2` offsets, row-major, summing to one.
    pub fn weights(&self) -> (usize, Vec<f64>) {
        let h = self.half as isize;
        let rho = self.radius();
        let mut w = Vec::with_capacity(((2 * h + 1) * (2 * h + 1)) as usize);
        for i in -h..=h {
            for j in -h..=h {
                let r2 = ((i * i + j * j) as f64) / (rho * rho);
                w.push(if r2 < 1.0 { (1.0 - r2).powi(2) } else { 0.0 });
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        (self.half, w)
    }
}

/// Convolves every view with the kernel (zero outside the detector). The
/// result carries no ROI mask.
pub fn mollify(p: &ProjectionSet, k: &MollifierKernel) -> ProjectionSet {
    let (views, rows, cols) = p.shape();
    let (h, w) = k.weights();
    let side = 2 * h + 1;
    let mut out = vec![0.0; views * rows * cols];
    out.par_chunks_mut(rows * cols).enumerate().for_each(|(v, dst)| {
        let src = p.view(v);
        for r in 0..rows {
            for c in 0..cols {
                let x = src[r * cols + c];
                if x == 0.0 {
                    continue;
                }
                for di in 0..side {
                    let rr = r as isize + di as isize - h as isize;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for dj in 0..side {
                        let cc = c as isize + dj as isize - h as isize;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        dst[rr as usize * cols + cc as usize] += w[di * side + dj] * x;
                    }
                }
            }
        }
    });
    p.unmasked().with_data(out).expect("finite convolution of finite data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spans_three_pixels() {
        let (h, w) = MollifierKernel::default().weights();
        assert_eq!(h, 1);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // center and edge neighbours carry weight, corners fall outside
        assert!(w[4] > w[1] && w[1] > 0.0);
        assert_eq!([w[0], w[2], w[6], w[8]], [0.0; 4]);
        assert!(MollifierKernel::new(0).is_err());
        let (h, w) = MollifierKernel::new(8).unwrap().weights();
        assert_eq!(h, 1);
        assert!(w.iter().all(|&x| x > 0.0));
        let (h, w) = MollifierKernel::new(24).unwrap().weights();
        assert_eq!((h, w), (0, vec![1.0]));
    }
}
