//! Blind phase search over a block of MFS outputs.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::waveform::Constellation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpsConfig {
    /// Number of test phases spread over one quadrant [−π/4, π/4).
    #[serde(default = "default_phases")]
    pub n_test_phases: usize,
    /// Symbols averaged around each position.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_phases() -> usize {
    64
}

fn default_window() -> usize {
    16
}

impl Default for BpsConfig {
    fn default() -> Self {
        Self {
            n_test_phases: default_phases(),
            window: default_window(),
        }
    }
}

impl BpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_test_phases == 0 || !self.n_test_phases.is_multiple_of(2) {
            return Err(invalid("n_test_phases", "must be even and > 0"));
        }
        if self.window == 0 {
            return Err(invalid("window", "must be >= 1"));
        }
        Ok(())
    }

    /// φ_b = (π/2)·b/B for b = −B/2 … B/2 − 1.
    pub fn test_phases(&self) -> Vec<f64> {
        let n = self.n_test_phases as i64;
        (-n / 2..n / 2)
            .map(|b| FRAC_PI_2 * b as f64 / n as f64)
            .collect()
    }
}

fn nearest_distance(v: Complex64, points: &[Complex64]) -> f64 {
    points
        .iter()
        .map(|x| (v - x).norm_sqr())
        .fold(f64::INFINITY, f64::min)
}

/// Rotate each symbol by the test phase minimizing the windowed distance to
/// the constellation, with the estimate unwrapped by multiples of π/2.
pub fn bps_recover(
    block: &[Complex64],
    cfg: &BpsConfig,
    constellation: &Constellation,
) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    Ok(bps_phases(block, cfg, constellation)?
        .iter()
        .zip(block)
        .map(|(phi, v)| v * Complex64::from_polar(1.0, -phi))
        .collect())
}

/// Per-symbol unwrapped phase estimates used by [`bps_recover`].
pub fn bps_phases(block: &[Complex64], cfg: &BpsConfig, constellation: &Constellation) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = block.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let phases = cfg.test_phases();
    let nb = phases.len();
    let rot: Vec<Complex64> = phases.iter().map(|p| Complex64::from_polar(1.0, -p)).collect();
    let points = constellation.points();

    // prefix sums of d_b(n) over n, one row per test phase
    let mut prefix = vec![0.0; nb * (n + 1)];
    for b in 0..nb {
        let row = &mut prefix[b * (n + 1)..(b + 1) * (n + 1)];
        for (k, v) in block.iter().enumerate() {
            row[k + 1] = row[k] + nearest_distance(v * rot[b], points);
        }
    }

    let before = cfg.window / 2;
    let after = cfg.window - before;
    let mut out = Vec::with_capacity(n);
    let mut prev: Option<f64> = None;
    for k in 0..n {
        let lo = k.saturating_sub(before);
        let hi = (k + after).min(n);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for b in 0..nb {
            let row = &prefix[b * (n + 1)..(b + 1) * (n + 1)];
            let d = (row[hi] - row[lo]) / (hi - lo) as f64;
            if d < best_d {
                best = b;
                best_d = d;
            }
        }
        let mut phi = phases[best];
        if let Some(p) = prev {
            phi += FRAC_PI_2 * ((p - phi) / FRAC_PI_2).round();
        }
        prev = Some(phi);
        out.push(phi);
    }
    Ok(out)
}
