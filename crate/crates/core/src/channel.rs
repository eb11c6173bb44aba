//! The memoryless two-user channel: per-symbol SPM/XPM phase rotation plus
//! white Gaussian noise on the sampling grid.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::waveform::{PulseShape, SampledWaveform};

/// A reproducible random stream addressed by `(seed, stream_id)`.
///
/// Backed by ChaCha8: the seed selects the key, `stream_id` the 64-bit
/// stream, and draws advance the block counter. Streams with distinct ids
/// never overlap, so batches can run in any order or in parallel.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with E|n|² = `variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> Complex64 {
        let sd = (0.5 * variance).sqrt();
        Complex64::new(sd * self.standard_normal(), sd * self.standard_normal())
    }

    /// Add i.i.d. complex Gaussian noise of the given per-sample variance.
    pub fn add_noise(&mut self, buf: &mut [Complex64], variance: f64) {
        if variance == 0.0 {
            return;
        }
        let sd = (0.5 * variance).sqrt();
        for s in buf {
            s.re += sd * self.standard_normal();
            s.im += sd * self.standard_normal();
        }
    }
}

/// Configuration of the memoryless channel for one symbol interval.
#[derive(Debug, Clone)]
pub struct MemorylessChannel {
    eta: f64,
    noise_psd: f64,
    pulse: PulseShape,
    pulse_sq: Vec<f64>,
}

impl MemorylessChannel {
    pub fn new(eta: f64, noise_psd: f64, pulse: PulseShape) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(invalid("eta", "must be finite and >= 0"));
        }
        if !(noise_psd.is_finite() && noise_psd >= 0.0) {
            return Err(invalid("noise_psd", "must be finite and >= 0"));
        }
        let pulse_sq = pulse.samples().iter().map(|g| g * g).collect();
        Ok(Self {
            eta,
            noise_psd,
            pulse,
            pulse_sq,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn noise_psd(&self) -> f64 {
        self.noise_psd
    }

    pub fn pulse(&self) -> &PulseShape {
        &self.pulse
    }

    /// Noise variance of one complex sample, N₀/dt.
    pub fn sample_variance(&self) -> f64 {
        self.noise_psd / self.pulse.dt()
    }

    /// Noiseless output x₁·g·exp(jη s g²) for interference level `s`, written into `out`.
    pub fn write_noiseless(&self, x1: Complex64, s: f64, out: &mut [Complex64]) {
        let g = self.pulse.samples();
        for ((o, gk), g2) in out.iter_mut().zip(g).zip(&self.pulse_sq) {
            *o = x1 * gk * Complex64::cis(self.eta * s * g2);
        }
    }

    /// One received symbol interval.
    pub fn propagate_symbol(
        &self,
        x1: Complex64,
        x2: Complex64,
        noise: &mut NoiseStream,
    ) -> SampledWaveform {
        let mut samples = vec![Complex64::new(0.0, 0.0); self.pulse.samples_per_symbol()];
        self.write_noiseless(x1, x1.norm_sqr() + 2.0 * x2.norm_sqr(), &mut samples);
        noise.add_noise(&mut samples, self.sample_variance());
        SampledWaveform {
            samples,
            dt: self.pulse.dt(),
            n_symbols: 1,
        }
    }

    /// Instantaneous frequency η·s·max|dg²/dt|/2π of the strongest phase term,
    /// against which correlator resolvability is judged.
    pub fn peak_instantaneous_frequency(&self, s_max: f64) -> f64 {
        self.eta * s_max * self.pulse.max_slope_of_square() / (2.0 * std::f64::consts::PI)
    }

    /// A warning when the nonlinear phase for level `s_max` varies faster than
    /// 40 % of the Nyquist rate of the grid.
    pub fn resolution_warning(&self, s_max: f64) -> Option<String> {
        let nyquist = 0.5 / self.pulse.dt();
        let f = self.peak_instantaneous_frequency(s_max);
        (f > 0.4 * nyquist).then(|| {
            format!(
                "nonlinear phase not resolved on the grid: instantaneous frequency {f:.3e} Hz \
                 exceeds 40% of Nyquist ({nyquist:.3e} Hz); increase samples_per_symbol"
            )
        })
    }
}

/// Variance of ⟨N, f⟩ for the sample-domain noise model: N₀·‖f‖².
pub fn awgn_variance_of_projection(f: &[f64], channel: &MemorylessChannel) -> Result<f64> {
    if f.len() != channel.pulse.samples_per_symbol() {
        return Err(crate::Error::LengthMismatch {
            expected: channel.pulse.samples_per_symbol(),
            actual: f.len(),
        });
    }
    let energy: f64 = f.iter().map(|v| v * v).sum::<f64>() * channel.pulse.dt();
    if !(energy.is_finite() && energy > 0.0) {
        return Err(invalid("f", "projection function must have finite nonzero energy"));
    }
    Ok(channel.noise_psd * energy)
}
