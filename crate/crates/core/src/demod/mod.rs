//! Demodulators: matched filtering and sampling (MFS), the sufficient
//! statistics (SS) projection, and maximum matching (MxM).

mod ss;

pub use ss::{
    ss_covariance, ss_means, ss_project, whiten, SsBasis, SsMeans, SsModel, SsStatistics,
    WhitenedModel, WHITEN_REL_TOL,
};

use std::cell::RefCell;
use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::Result;
use crate::waveform::{inner_real, PulseShape};

/// MFS output ⟨rx, g⟩ over one symbol interval.
pub fn mfs(rx: &[Complex64], pulse: &PulseShape) -> Result<Complex64> {
    inner_real(rx, pulse.samples(), pulse.dt())
}

/// The phase integrals
/// F_s(z) = ½ Σ g_k² sin(η z g_k²) dt and F_c(z) = ½ Σ g_k² cos(η z g_k²) dt
/// on the pulse grid, memoized per argument.
#[derive(Debug)]
pub struct PhaseIntegrals {
    eta: f64,
    dt: f64,
    pulse_sq: Vec<f64>,
    cache: RefCell<HashMap<u64, (f64, f64)>>,
}

/// Arguments equal to ~1e-12 relative share a cache slot.
fn quantize(z: f64) -> u64 {
    const DROP: u32 = 12;
    let bits = (z + 0.0).to_bits();
    (bits.wrapping_add(1 << (DROP - 1))) >> DROP
}

impl PhaseIntegrals {
    pub fn new(eta: f64, pulse: &PulseShape) -> Self {
        Self {
            eta,
            dt: pulse.dt(),
            pulse_sq: pulse.samples().iter().map(|g| g * g).collect(),
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn evaluate(&self, z: f64) -> (f64, f64) {
        let (mut s, mut c) = (0.0, 0.0);
        for g2 in &self.pulse_sq {
            let (sin, cos) = (self.eta * z * g2).sin_cos();
            s += g2 * sin;
            c += g2 * cos;
        }
        (0.5 * s * self.dt, 0.5 * c * self.dt)
    }

    /// (F_s(z), F_c(z)).
    pub fn pair(&self, z: f64) -> (f64, f64) {
        *self
            .cache
            .borrow_mut()
            .entry(quantize(z))
            .or_insert_with(|| self.evaluate(z))
    }

    pub fn f_sin(&self, z: f64) -> f64 {
        self.pair(z).0
    }

    pub fn f_cos(&self, z: f64) -> f64 {
        self.pair(z).1
    }

    /// ⟨g·exp(jη s g²), g⟩ = 2F_c(s) + 2j·F_s(s).
    pub fn mfs_gain(&self, s: f64) -> Complex64 {
        let (fs, fc) = self.pair(s);
        Complex64::new(2.0 * fc, 2.0 * fs)
    }

    pub fn cached_arguments(&self) -> usize {
        self.cache.borrow().len()
    }
}

/// Output of the maximum-matching demodulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MxmOutput {
    /// De-rotated matched-filter output.
    pub w: Complex64,
    /// Estimated interference level s_max.
    pub s_max: f64,
    pub level: usize,
}

/// Maximum matching: pick the level s' ∈ S maximizing |⟨rx, g·exp(jη s' g²)⟩|
/// and return that correlator as w.
pub fn mxm(rx: &[Complex64], basis: &SsBasis) -> Result<MxmOutput> {
    Ok(mxm_from_statistics(&ss_project(rx, basis)?, basis))
}

/// MxM evaluated from the 4|S| real correlators of the SS projection.
pub fn mxm_from_statistics(u: &SsStatistics, basis: &SsBasis) -> MxmOutput {
    let n = basis.levels().len();
    let (ur, utr, ui, uti) = u.blocks(n);
    let mut best = 0;
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_w = Complex64::new(0.0, 0.0);
    for l in 0..n {
        let w = Complex64::new(utr[l] + ui[l], uti[l] - ur[l]);
        let metric = w.norm_sqr();
        // strict comparison keeps the smallest level on ties
        if metric > best_metric {
            best = l;
            best_metric = metric;
            best_w = w;
        }
    }
    MxmOutput {
        w: best_w,
        s_max: basis.levels()[best],
        level: best,
    }
}
