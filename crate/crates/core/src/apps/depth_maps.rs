//! Reducing per-frame depth maps to a scene depth histogram.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DepthHistogram, HistogramDomain};
use crate::{Error, Result};

/// Describes raw depth maps: pixel dimensions and the factor that turns a
/// stored value into meters. Zero or non-finite pixels mean "no depth".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMapManifest {
    pub width: u32,
    pub height: u32,
    pub scale_to_m: f64,
    #[serde(default)]
    pub frames: Vec<String>,
}

/// Reads a grayscale PNG (8 or 16 bit) as depths in meters.
pub fn read_depth_png(path: impl AsRef<Path>, scale_to_m: f64) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let img = image::open(path)?.into_luma16();
    Ok(img.pixels().map(|p| p.0[0] as f64 * scale_to_m).collect())
}

/// Reads a flat little-endian `f32` map of `width × height` values.
pub fn read_depth_f32(path: impl AsRef<Path>, manifest: &DepthMapManifest) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = manifest.width as usize * manifest.height as usize * 4;
    if bytes.len() != expected {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!(
                "{} bytes, expected {expected} for {}×{} f32 values",
                bytes.len(),
                manifest.width,
                manifest.height
            ),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 * manifest.scale_to_m)
        .collect())
}

/// Log-spaced depth bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBinning {
    pub bins: usize,
    pub range_m: (f64, f64),
}

impl Default for LogBinning {
    fn default() -> Self {
        Self {
            bins: 64,
            range_m: (0.1, 100.0),
        }
    }
}

impl LogBinning {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range_m;
        if self.bins == 0 || !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Invalid(format!("bad log binning {self:?}")));
        }
        Ok(())
    }

    /// Geometric bin centers.
    pub fn centers(&self) -> Vec<f64> {
        let (a, b) = (self.range_m.0.ln(), self.range_m.1.ln());
        let w = (b - a) / self.bins as f64;
        (0..self.bins)
            .map(|i| (a + w * (i as f64 + 0.5)).exp())
            .collect()
    }

    fn index(&self, depth_m: f64) -> Option<usize> {
        let (lo, hi) = self.range_m;
        if !(depth_m >= lo && depth_m <= hi) {
            return None;
        }
        let frac = (depth_m / lo).ln() / (hi / lo).ln();
        Some(((frac * self.bins as f64) as usize).min(self.bins - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledDepths {
    pub histogram: DepthHistogram,
    /// Pixels counted into bins.
    pub used: u64,
    /// Pixels with no depth (zero or non-finite).
    pub missing: u64,
    /// Valid pixels outside the binning range.
    pub out_of_range: u64,
}

/// Pools every valid pixel of every frame into one histogram.
pub fn pool_depths(frames: &[Vec<f64>], binning: LogBinning) -> Result<PooledDepths> {
    binning.validate()?;
    let zero = || (vec![0u64; binning.bins], 0u64, 0u64);
    let (counts, missing, out_of_range) = frames
        .par_iter()
        .map(|frame| {
            let mut acc = zero();
            for &d in frame {
                if !(d.is_finite() && d > 0.0) {
                    acc.1 += 1;
                } else if let Some(i) = binning.index(d) {
                    acc.0[i] += 1;
                } else {
                    acc.2 += 1;
                }
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            a.0.iter_mut().zip(&b.0).for_each(|(x, y)| *x += y);
            (a.0, a.1 + b.1, a.2 + b.2)
        });
    let used = counts.iter().sum();
    let weights = counts.iter().map(|&c| c as f64).collect();
    Ok(PooledDepths {
        histogram: DepthHistogram::from_weights(
            HistogramDomain::DepthM,
            binning.centers(),
            weights,
        )?,
        used,
        missing,
        out_of_range,
    })
}
