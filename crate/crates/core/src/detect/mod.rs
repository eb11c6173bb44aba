//! Symbol detectors: minimum distance (MD), MAP on the MFS output, MAP on
//! the SS statistic, the two-stage amplitude/phase detector (TS), and
//! blind phase search (BPS) ahead of MD.

mod bps;
mod ts;

pub use bps::{bps_recover, BpsConfig};
pub use ts::{ln_bessel_i0, ts, ts_thresholds, TsThresholds};

use num_complex::Complex64;

use crate::demod::{PhaseIntegrals, SsModel, SsStatistics};
use crate::error::{Error, Result};
use crate::waveform::{Constellation, InterferenceSet, PulseShape};

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// ln Σ exp(a_k), with -inf for an empty or all -inf input.
pub fn log_sum_exp(a: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = a.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + a.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Nearest constellation point to `v`.
pub fn md(v: Complex64, constellation: &Constellation) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, x) in constellation.points().iter().enumerate() {
        let d = (v - x).norm_sqr();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Gaussian-mixture model of the MFS output v given x_i:
/// v ~ Σ_j π̃_ji CN(μ_ji, N₀) with μ_ji = x_i·(2F_c(s_j) + 2jF_s(s_j)).
#[derive(Debug, Clone)]
pub struct MapMfsModel {
    n_points: usize,
    mu: Vec<Complex64>,
    log_prior: Vec<f64>,
    log_cond: Vec<f64>,
    noise_psd: f64,
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

impl MapMfsModel {
    pub fn new(
        constellation: &Constellation,
        interference: &InterferenceSet,
        eta: f64,
        pulse: &PulseShape,
        noise_psd: f64,
    ) -> Result<Self> {
        if !(noise_psd > 0.0 && noise_psd.is_finite()) {
            return Err(crate::error::invalid("noise_psd", "must be finite and > 0"));
        }
        let f = PhaseIntegrals::new(eta, pulse);
        let n = constellation.len();
        let mut mu = Vec::with_capacity(n * interference.len());
        let mut log_cond = Vec::with_capacity(n * interference.len());
        for (j, &s) in interference.values().iter().enumerate() {
            let gain = f.mfs_gain(s);
            for (i, x) in constellation.points().iter().enumerate() {
                mu.push(x * gain);
                log_cond.push(ln_or_neg_inf(interference.cond_prob_for_point(j, i)));
            }
        }
        Ok(Self {
            n_points: n,
            mu,
            log_prior: constellation.priors().iter().map(|&p| ln_or_neg_inf(p)).collect(),
            log_cond,
            noise_psd,
        })
    }

    pub fn mean(&self, j: usize, i: usize) -> Complex64 {
        self.mu[j * self.n_points + i]
    }

    pub fn n_levels(&self) -> usize {
        self.mu.len() / self.n_points
    }

    pub fn noise_psd(&self) -> f64 {
        self.noise_psd
    }

    /// Log-posterior of every symbol up to a common constant.
    pub fn scores(&self, v: Complex64) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|i| {
                let terms = (0..self.n_levels()).map(|j| {
                    let k = j * n + i;
                    self.log_cond[k] - (v - self.mu[k]).norm_sqr() / self.noise_psd
                });
                self.log_prior[i] + log_sum_exp(terms)
            })
            .collect()
    }
}

pub fn map_mfs(v: Complex64, model: &MapMfsModel) -> usize {
    argmax(&model.scores(v))
}

/// MAP model over the whitened SS statistic.
#[derive(Debug, Clone)]
pub struct MapSsModel {
    model: SsModel,
    n_points: usize,
    n_levels: usize,
    log_prior: Vec<f64>,
    log_cond: Vec<f64>,
}

impl MapSsModel {
    pub fn new(model: SsModel, constellation: &Constellation, interference: &InterferenceSet) -> Self {
        let n = constellation.len();
        let log_cond = (0..interference.len())
            .flat_map(|j| (0..n).map(move |i| (j, i)))
            .map(|(j, i)| ln_or_neg_inf(interference.cond_prob_for_point(j, i)))
            .collect();
        Self {
            model,
            n_points: n,
            n_levels: interference.len(),
            log_prior: constellation.priors().iter().map(|&p| ln_or_neg_inf(p)).collect(),
            log_cond,
        }
    }

    pub fn ss_model(&self) -> &SsModel {
        &self.model
    }

    pub fn scores(&self, u: &SsStatistics) -> Result<Vec<f64>> {
        let w = &self.model.whitened;
        let z = w.project(&u.u)?;
        let n = self.n_points;
        Ok((0..n)
            .map(|i| {
                let terms = (0..self.n_levels).filter_map(|j| {
                    let k = j * n + i;
                    // impossible pairs carry no mean worth evaluating
                    (self.log_cond[k] > f64::NEG_INFINITY)
                        .then(|| self.log_cond[k] + w.log_density(&z, k))
                });
                self.log_prior[i] + log_sum_exp(terms.collect::<Vec<_>>().into_iter())
            })
            .collect())
    }
}

pub fn map_ss(u: &SsStatistics, model: &MapSsModel) -> Result<usize> {
    if u.u.len() != model.model.whitened.dim() {
        return Err(Error::LengthMismatch {
            expected: model.model.whitened.dim(),
            actual: u.u.len(),
        });
    }
    Ok(argmax(&model.scores(u)?))
}
