//! Image quality metrics for single-channel images in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image shapes differ: {0} vs {1} values")]
    ShapeMismatch(usize, usize),
    #[error("image of {rows}x{cols} is smaller than the {window}-pixel window")]
    TooSmall { rows: usize, cols: usize, window: usize },
}

/// PSNR reported for identical images.
pub const PSNR_CEILING: f64 = 100.0;

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch(a.len(), b.len()));
    }
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.len().max(1) as f64)
}

pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CEILING);
    }
    Ok((10.0 * libm::log10(peak * peak / m)).min(PSNR_CEILING))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0 }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window).map(|i| libm::exp(-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma))).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major image.
fn filter(img: &[f64], rows: usize, cols: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (or, oc) = (rows - n + 1, cols - n + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        for c in 0..oc {
            tmp[r * oc + c] = (0..n).map(|i| k[i] * img[r * cols + c + i]).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..n).map(|i| k[i] * tmp[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained Gaussian windows.
pub fn ssim(a: &[f32], b: &[f32], rows: usize, cols: usize, p: &SsimParams) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch(a.len(), b.len()));
    }
    if a.len() != rows * cols {
        return Err(MetricError::ShapeMismatch(a.len(), rows * cols));
    }
    if rows < p.window || cols < p.window {
        return Err(MetricError::TooSmall { rows, cols, window: p.window });
    }
    let k = gaussian(p.window, p.sigma);
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter(&x, rows, cols, &k);
    let my = filter(&y, rows, cols, &k);
    let sxx = filter(&xx, rows, cols, &k);
    let syy = filter(&yy, rows, cols, &k);
    let sxy = filter(&xy, rows, cols, &k);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}
