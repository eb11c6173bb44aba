//! Two-stage detection: ring decision by MAP amplitude thresholds on the
//! Rice density of |w|, w ~ CN(x, N₀), then the nearest phase on the ring.

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::waveform::{Constellation, LEVEL_MERGE_RTOL};

/// ln I₀(x) for x ≥ 0 without overflow.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x < 30.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        while term > 1e-17 * sum {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        sum.ln()
    } else {
        // I₀(x) ~ e^x/sqrt(2πx)·Σ a_k x^{-k}, a_k = a_{k-1}(2k-1)²/(8k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..30 {
            let kf = k as f64;
            term *= (2.0 * kf - 1.0).powi(2) / (8.0 * kf * x);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
    }
}

/// Ring amplitudes, their priors, and the decision thresholds
/// m_0 = 0 < m_1 < … < m_|R| = ∞.
#[derive(Debug, Clone, PartialEq)]
pub struct TsThresholds {
    pub rings: Vec<f64>,
    pub ring_priors: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Interior thresholds that fell back to the bracket midpoint.
    pub fallbacks: Vec<usize>,
}

impl TsThresholds {
    /// Rings and priors collected from a constellation.
    pub fn for_constellation(constellation: &Constellation, noise_psd: f64) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = constellation
            .points()
            .iter()
            .zip(constellation.priors())
            .map(|(x, p)| (x.norm(), *p))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut rings: Vec<f64> = Vec::new();
        let mut priors: Vec<f64> = Vec::new();
        for (r, p) in pairs {
            match rings.last() {
                Some(&last) if (r - last).abs() <= LEVEL_MERGE_RTOL * r.max(last) => {
                    *priors.last_mut().unwrap() += p;
                }
                _ => {
                    rings.push(r);
                    priors.push(p);
                }
            }
        }
        ts_thresholds(&rings, &priors, noise_psd)
    }

    /// Bin index of an amplitude under the convention m_{i−1} ≤ a < m_i.
    pub fn ring_of(&self, amplitude: f64) -> usize {
        let interior = &self.thresholds[1..self.thresholds.len() - 1];
        interior.partition_point(|&m| m <= amplitude)
    }
}

/// Log of the Rice density of |w| at `a`, up to terms shared by all rings,
/// plus the ring prior.
fn log_weighted_rice(a: f64, r: f64, prior: f64, noise_psd: f64) -> f64 {
    prior.ln() - r * r / noise_psd + ln_bessel_i0(2.0 * a * r / noise_psd)
}

pub fn ts_thresholds(rings: &[f64], ring_priors: &[f64], noise_psd: f64) -> Result<TsThresholds> {
    if rings.is_empty() || rings.len() != ring_priors.len() {
        return Err(invalid("rings", "need one prior per ring and at least one ring"));
    }
    if rings.windows(2).any(|w| !(w[0] < w[1])) || rings[0] < 0.0 {
        return Err(invalid("rings", "must be non-negative, sorted and distinct"));
    }
    if ring_priors.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("ring_priors", "must be positive"));
    }
    if !(noise_psd > 0.0 && noise_psd.is_finite()) {
        return Err(invalid("noise_psd", "must be finite and > 0"));
    }
    let mut thresholds = vec![0.0];
    let mut fallbacks = Vec::new();
    for i in 0..rings.len() - 1 {
        let (r0, r1) = (rings[i], rings[i + 1]);
        let f = |a: f64| {
            log_weighted_rice(a, r1, ring_priors[i + 1], noise_psd)
                - log_weighted_rice(a, r0, ring_priors[i], noise_psd)
        };
        let (mut lo, mut hi) = (r0, r1);
        let (flo, fhi) = (f(lo), f(hi));
        let m = if flo < 0.0 && fhi > 0.0 {
            while hi - lo > 1e-12 * hi {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        } else {
            log::warn!("no threshold sign change between rings {r0:e} and {r1:e}; using the midpoint");
            fallbacks.push(i + 1);
            0.5 * (r0 + r1)
        };
        thresholds.push(m);
    }
    thresholds.push(f64::INFINITY);
    Ok(TsThresholds {
        rings: rings.to_vec(),
        ring_priors: ring_priors.to_vec(),
        thresholds,
        fallbacks,
    })
}

fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Pick the ring from |w|, then the point on it closest in angle to w.
pub fn ts(w: Complex64, thresholds: &TsThresholds, constellation: &Constellation) -> usize {
    let r = thresholds.rings[thresholds.ring_of(w.norm())];
    let phase = w.arg();
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, x) in constellation.points().iter().enumerate() {
        let amp = x.norm();
        if (amp - r).abs() > LEVEL_MERGE_RTOL * amp.max(r) {
            continue;
        }
        let d = if amp == 0.0 { 0.0 } else { angle_distance(x.arg(), phase) };
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}
