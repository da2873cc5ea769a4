//! Regularizers of the ROI iteration: a detector-space mollifier and
//! image-space wavelet shrinkage.

mod mollifier;
mod wavelet;

pub use mollifier::{mollify, MollifierKernel};
pub use wavelet::{
    dwt3, idwt3, shrink_thresholds, shrink_values, wavelet_shrink, wavelet_shrink_with, ShrinkMode,
    WaveletConfig, DAUB4,
};
