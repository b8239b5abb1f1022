//! Robust segment weighting from MAD-normalized residual energies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::residuals::{SegmentResidual, RESIDUALS_PER_SEGMENT};

/// Consistency constant making the MAD a standard-deviation estimate for
/// Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub z_soft: f64,
    /// Decay exponent.
    pub p: f64,
    pub w_min: f64,
    pub z_hard: f64,
    /// Floor on the MAD in the z-score denominator.
    pub eps_min: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { z_soft: 2.5, p: 4.0, w_min: 0.05, z_hard: 6.0, eps_min: 1e-9 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.z_soft > 0.0
            && self.p > 0.0
            && (0.0..1.0).contains(&self.w_min)
            && self.z_hard > self.z_soft
            && self.eps_min > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid weight configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentWeights {
    pub w: Vec<f64>,
    pub rejected: Vec<bool>,
}

impl SegmentWeights {
    pub fn uniform(n: usize) -> Self {
        SegmentWeights { w: vec![1.0; n], rejected: vec![false; n] }
    }

    pub fn rejected_count(&self) -> usize {
        self.rejected.iter().filter(|r| **r).count()
    }
}

/// `e_i = r_iᵀ G_i r_i` with a diagonal local weight.
pub fn residual_energies(residuals: &[SegmentResidual], local: &[f64; RESIDUALS_PER_SEGMENT]) -> Vec<f64> {
    residuals.iter().map(|r| r.to_vector().iter().zip(local).map(|(ri, gi)| gi * ri * ri).sum()).collect()
}

/// Median; even lengths average the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] })
}

/// Scaled median absolute deviation about `center`.
pub fn mad(values: &[f64], center: f64) -> Option<f64> {
    let dev: Vec<f64> = values.iter().map(|e| (e - center).abs()).collect();
    median(&dev).map(|m| MAD_SCALE * m)
}

/// `|e_i - median| / max(MAD, eps_min)`.
pub fn robust_zscores(energies: &[f64], eps_min: f64) -> Result<Vec<f64>> {
    let center = median(energies).ok_or(Error::EmptyWindow)?;
    let scale = mad(energies, center).ok_or(Error::EmptyWindow)?.max(eps_min);
    Ok(energies.iter().map(|e| (e - center).abs() / scale).collect())
}

/// Soft decay `max(1 / (1 + (z/z_soft)^p), w_min)`, then zero weight above
/// `z_hard`. Fails if nothing survives.
pub fn weights_from_zscores(z: &[f64], cfg: &WeightConfig) -> Result<SegmentWeights> {
    let mut out = SegmentWeights { w: Vec::with_capacity(z.len()), rejected: Vec::with_capacity(z.len()) };
    for &zi in z {
        let reject = zi > cfg.z_hard;
        let soft = (1.0 / (1.0 + (zi / cfg.z_soft).powf(cfg.p))).max(cfg.w_min);
        out.w.push(if reject { 0.0 } else { soft });
        out.rejected.push(reject);
    }
    if !z.is_empty() && out.rejected.iter().all(|r| *r) {
        return Err(Error::AllRejected);
    }
    Ok(out)
}
