//! Fiber and system parameters, and the constants derived from them.
//!
//! [`FiberParams`] is expressed in the customary engineering units (km, dB,
//! ps²/km); everything downstream of [`FiberParams::derive`] works in SI.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Nepers per decibel for power quantities.
pub const NEPER_PER_DB: f64 = std::f64::consts::LN_10 / 10.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    1e-3 * db_to_linear(dbm)
}

/// Physical parameters of the link.
///
/// Field names double as configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    /// Span length [km].
    pub span_length: f64,
    /// Attenuation [dB/km].
    pub attenuation_db: f64,
    /// Nonlinear coefficient [1/(W km)].
    pub gamma: f64,
    /// Number of amplification spans.
    pub n_span: u32,
    /// Symbol rate [baud].
    pub symbol_rate: f64,
    /// Optical photon energy [J].
    pub photon_energy: f64,
    /// Amplifier noise figure [dB].
    pub noise_figure_db: f64,
    /// Group-velocity dispersion [ps²/km]. Only the split-step channel uses it.
    #[serde(default)]
    pub beta2: f64,
    /// WDM channel spacing [Hz]. Only the split-step channel uses it.
    #[serde(default = "default_spacing")]
    pub channel_spacing: f64,
}

fn default_spacing() -> f64 {
    40e9
}

impl FiberParams {
    /// The single-span link used throughout the numerical examples:
    /// 150 km, 0.25 dB/km, γ = 1.27 /(W km), 10 Gbaud, hν = 1.28e-19 J, F = 6 dB.
    pub fn reference() -> Self {
        Self {
            span_length: 150.0,
            attenuation_db: 0.25,
            gamma: 1.27,
            n_span: 1,
            symbol_rate: 10e9,
            photon_energy: 1.28e-19,
            noise_figure_db: 6.0,
            beta2: 0.0,
            channel_spacing: 40e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and > 0, got {v}")))
            }
        };
        let non_negative = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite and >= 0, got {v}")))
            }
        };
        positive("span_length", self.span_length)?;
        non_negative("attenuation_db", self.attenuation_db)?;
        non_negative("gamma", self.gamma)?;
        positive("symbol_rate", self.symbol_rate)?;
        positive("photon_energy", self.photon_energy)?;
        positive("channel_spacing", self.channel_spacing)?;
        if !self.noise_figure_db.is_finite() {
            return Err(invalid("noise_figure_db", "must be finite"));
        }
        if !self.beta2.is_finite() {
            return Err(invalid("beta2", "must be finite"));
        }
        if self.n_span < 1 {
            return Err(invalid("n_span", "must be >= 1"));
        }
        Ok(())
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.symbol_rate
    }

    pub fn span_length_m(&self) -> f64 {
        self.span_length * 1e3
    }

    /// Power attenuation coefficient [Np/m].
    pub fn alpha_np_per_m(&self) -> f64 {
        self.attenuation_db * NEPER_PER_DB * 1e-3
    }

    /// Nonlinear coefficient [1/(W m)].
    pub fn gamma_per_w_m(&self) -> f64 {
        self.gamma * 1e-3
    }

    /// Dispersion [s²/m].
    pub fn beta2_s2_per_m(&self) -> f64 {
        self.beta2 * 1e-24 * 1e-3
    }

    pub fn derive(&self) -> Result<DerivedParams> {
        self.validate()?;
        let alpha_np = self.attenuation_db * NEPER_PER_DB;
        let eff_length = effective_length(alpha_np, self.span_length);
        let eta = f64::from(self.n_span) * self.gamma * eff_length;
        let gain_linear = (alpha_np * self.span_length).exp();
        let noise_psd = 0.5
            * f64::from(self.n_span)
            * self.photon_energy
            * db_to_linear(self.noise_figure_db)
            * gain_linear;
        Ok(DerivedParams {
            eff_length,
            eta,
            noise_psd,
            gain_linear,
            alpha_np,
        })
    }
}

/// (1 − e^{−αL})/α, continued to L at α = 0.
pub fn effective_length(alpha: f64, length: f64) -> f64 {
    let x = alpha * length;
    if x < 1e-8 {
        // series keeps full precision near the lossless limit
        length * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / alpha
    }
}

/// Constants of the memoryless channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Effective length [km].
    pub eff_length: f64,
    /// Nonlinearity coefficient η [1/W].
    pub eta: f64,
    /// Noise power spectral density N₀ [W/Hz].
    pub noise_psd: f64,
    /// Amplifier power gain (linear).
    pub gain_linear: f64,
    /// Attenuation [Np/km].
    pub alpha_np: f64,
}
