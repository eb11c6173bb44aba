//! Two-channel WDM propagation over the scalar NLS equation by the
//! symmetric split-step Fourier method, with brick-wall channelization,
//! lumped amplification and receiver-side dispersion compensation.
//!
//! Transforms follow the rustfft sign convention, X_k = Σ x_n e^{−2πjkn/N},
//! so ∂²/∂t² maps to −ω² and dispersion over a distance h multiplies the
//! spectrum by exp(jβ₂ω²h/2).

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::NoiseStream;
use crate::error::{invalid, Error, Result};
use crate::physparams::FiberParams;
use crate::waveform::SampledWaveform;

/// Per-step nonlinear phase above which the step is considered coarse.
pub const MAX_STEP_PHASE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfmCfg {
    /// Spatial step [km].
    #[serde(default = "default_step")]
    pub step_km: f64,
    /// Payload symbols per block; the default makes the block, guards
    /// included, 1024 symbols long.
    #[serde(default = "default_block")]
    pub n_symbols_per_block: usize,
    /// Symbols discarded at each block edge.
    #[serde(default = "default_guard")]
    pub guard_symbols: usize,
    /// Samples per symbol of the propagation grid.
    #[serde(default = "default_spp")]
    pub samples_per_symbol: usize,
}

fn default_step() -> f64 {
    0.1
}
fn default_block() -> usize {
    992
}
fn default_guard() -> usize {
    16
}
fn default_spp() -> usize {
    16
}

impl Default for SsfmCfg {
    fn default() -> Self {
        Self {
            step_km: default_step(),
            n_symbols_per_block: default_block(),
            guard_symbols: default_guard(),
            samples_per_symbol: default_spp(),
        }
    }
}

impl SsfmCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_km > 0.0 && self.step_km.is_finite()) {
            return Err(invalid("step_km", "must be finite and > 0"));
        }
        if self.n_symbols_per_block == 0 {
            return Err(invalid("n_symbols_per_block", "must be >= 1"));
        }
        if self.samples_per_symbol < 2 {
            return Err(invalid("samples_per_symbol", "must be >= 2"));
        }
        Ok(())
    }

    /// Symbols per block including both guards.
    pub fn block_symbols(&self) -> usize {
        self.n_symbols_per_block + 2 * self.guard_symbols
    }
}

/// Aggregate field of both channels on the propagation grid.
#[derive(Debug, Clone)]
pub struct WdmFrame {
    pub field: SampledWaveform,
    /// Carrier spacing Δf [Hz]; channel 1 sits at −Δf/2 and channel 2 at +Δf/2.
    pub channel_spacing: f64,
    /// Samples per symbol of the receiver grid the channels came from.
    pub rx_samples_per_symbol: usize,
}

impl WdmFrame {
    pub fn energy(&self) -> f64 {
        self.field.energy()
    }
}

/// Frequency-bin layout shared by mux and demux.
struct BandPlan {
    /// Carrier offset in bins.
    shift: i64,
    /// Kept baseband bins satisfy |k| < cutoff (in bins).
    cutoff: f64,
}

fn signed_bin(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn wrap_bin(k: i64, n: usize) -> usize {
    k.rem_euclid(n as i64) as usize
}

fn band_plan(df: f64, spacing: f64, sim_len: usize, sim_dt: f64) -> Result<BandPlan> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid("channel_spacing", "must be finite and > 0"));
    }
    let shift_f = 0.5 * spacing / df;
    let shift = shift_f.round();
    if (shift - shift_f).abs() > 1e-6 {
        return Err(Error::Incompatible(format!(
            "carrier offset {:.6e} Hz is not a whole number of {df:.6e} Hz bins",
            0.5 * spacing
        )));
    }
    let nyquist = 0.5 / sim_dt;
    let band_edge = 0.75 * spacing;
    if band_edge >= nyquist || (shift as usize + (0.25 * spacing / df).ceil() as usize) * 2 >= sim_len {
        return Err(Error::Aliasing {
            sample_rate: 1.0 / sim_dt,
            band_edge,
        });
    }
    Ok(BandPlan {
        shift: shift as i64,
        cutoff: 0.25 * spacing / df,
    })
}

fn fft(buf: &mut [Complex64], forward: bool) {
    let mut planner = FftPlanner::new();
    let plan = if forward {
        planner.plan_fft_forward(buf.len())
    } else {
        planner.plan_fft_inverse(buf.len())
    };
    plan.process(buf);
}

/// Spectrum of `x` on its own grid.
fn spectrum(x: &[Complex64]) -> Vec<Complex64> {
    let mut s = x.to_vec();
    fft(&mut s, true);
    s
}

/// Inverse of [`spectrum`], including the 1/N factor.
fn inverse(mut s: Vec<Complex64>) -> Vec<Complex64> {
    fft(&mut s, false);
    let scale = 1.0 / s.len() as f64;
    s.iter_mut().for_each(|v| *v *= scale);
    s
}

/// Ideal low-pass filter with two-sided width Δf/2 on the signal's own grid.
pub fn brick_wall(x: &SampledWaveform, spacing: f64) -> SampledWaveform {
    let n = x.samples.len();
    let df = 1.0 / (n as f64 * x.dt);
    let cutoff = 0.25 * spacing / df;
    let mut s = spectrum(&x.samples);
    for (k, v) in s.iter_mut().enumerate() {
        if (signed_bin(k, n) as f64).abs() >= cutoff {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    SampledWaveform {
        samples: inverse(s),
        dt: x.dt,
        n_symbols: x.n_symbols,
    }
}

/// Filter both channels to ±Δf/4, shift them to ∓Δf/2 and sum them on a
/// grid of `sim_samples_per_symbol` samples per symbol.
pub fn mux(
    ch1: &SampledWaveform,
    ch2: &SampledWaveform,
    channel_spacing: f64,
    sim_samples_per_symbol: usize,
) -> Result<WdmFrame> {
    if ch1.samples.len() != ch2.samples.len() || ch1.dt != ch2.dt || ch1.n_symbols != ch2.n_symbols {
        return Err(Error::LengthMismatch {
            expected: ch1.samples.len(),
            actual: ch2.samples.len(),
        });
    }
    let n1 = ch1.samples.len();
    let nsym = ch1.n_symbols;
    if nsym == 0 || !n1.is_multiple_of(nsym) {
        return Err(invalid("n_symbols", "waveform must hold a whole number of symbols"));
    }
    let period = ch1.dt * (n1 / nsym) as f64;
    let n2 = nsym * sim_samples_per_symbol;
    let dt2 = period / sim_samples_per_symbol as f64;
    let df = 1.0 / (n1 as f64 * ch1.dt);
    let plan = band_plan(df, channel_spacing, n2, dt2)?;
    let scale = n2 as f64 / n1 as f64;

    let mut out = vec![Complex64::new(0.0, 0.0); n2];
    for (ch, sign) in [(ch1, -1i64), (ch2, 1)] {
        let s = spectrum(&ch.samples);
        for (k, v) in s.iter().enumerate() {
            let kk = signed_bin(k, n1);
            if (kk as f64).abs() < plan.cutoff {
                out[wrap_bin(kk + sign * plan.shift, n2)] += v * scale;
            }
        }
    }
    Ok(WdmFrame {
        field: SampledWaveform {
            samples: inverse(out),
            dt: dt2,
            n_symbols: nsym,
        },
        channel_spacing,
        rx_samples_per_symbol: n1 / nsym,
    })
}

/// Summary of one propagation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationReport {
    pub steps_per_span: usize,
    pub step_m: f64,
    /// Largest γ|a|²h_eff seen in any step [rad].
    pub max_step_phase: f64,
}

/// Split-step propagator for a fixed grid, reusable across blocks.
pub struct Propagator {
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
    half: Vec<Complex64>,
    full: Vec<Complex64>,
    len: usize,
    dt: f64,
    alpha: f64,
    gamma: f64,
    n_span: u32,
    gain: f64,
    step_m: f64,
    steps: usize,
    // without dispersion the linear step is the identity and the transforms are skipped
    dispersive: bool,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("len", &self.len)
            .field("dt", &self.dt)
            .field("steps", &self.steps)
            .finish()
    }
}

fn dispersion_operator(len: usize, dt: f64, beta2: f64, distance: f64) -> Vec<Complex64> {
    let df = 1.0 / (len as f64 * dt);
    (0..len)
        .map(|k| {
            let w = TAU * signed_bin(k, len) as f64 * df;
            Complex64::from_polar(1.0, 0.5 * beta2 * w * w * distance)
        })
        .collect()
}

impl Propagator {
    pub fn new(fiber: &FiberParams, cfg: &SsfmCfg, len: usize, dt: f64) -> Result<Self> {
        fiber.validate()?;
        cfg.validate()?;
        let span = fiber.span_length_m();
        let steps = (fiber.span_length / cfg.step_km).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let beta2 = fiber.beta2_s2_per_m();
        let mut planner = FftPlanner::new();
        let derived = fiber.derive()?;
        Ok(Self {
            forward: planner.plan_fft_forward(len),
            backward: planner.plan_fft_inverse(len),
            half: dispersion_operator(len, dt, beta2, 0.5 * h),
            full: dispersion_operator(len, dt, beta2, h),
            len,
            dt,
            alpha: fiber.alpha_np_per_m(),
            gamma: fiber.gamma_per_w_m(),
            n_span: fiber.n_span,
            gain: derived.gain_linear,
            step_m: h,
            steps,
            dispersive: beta2 != 0.0,
        })
    }

    pub fn steps_per_span(&self) -> usize {
        self.steps
    }

    /// Propagate through every span, amplifying and adding noise of total
    /// PSD `noise_psd` (split evenly across spans) when `rng` is given.
    pub fn run(
        &self,
        frame: &WdmFrame,
        noise_psd: f64,
        mut rng: Option<&mut NoiseStream>,
    ) -> Result<(WdmFrame, PropagationReport)> {
        if frame.field.samples.len() != self.len || (frame.field.dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: frame.field.samples.len(),
            });
        }
        let h = self.step_m;
        let h_eff = crate::physparams::effective_length(self.alpha, h);
        let decay = (-0.5 * self.alpha * h).exp();
        let amp_gain = self.gain.sqrt();
        let scale = 1.0 / self.len as f64;
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len().max(self.backward.get_inplace_scratch_len())];
        let mut a = frame.field.samples.clone();
        let mut max_phase = 0.0f64;
        for _ in 0..self.n_span {
            if self.dispersive {
                self.forward.process_with_scratch(&mut a, &mut scratch);
                mul(&mut a, &self.half);
            }
            for step in 0..self.steps {
                let norm = if self.dispersive {
                    self.backward.process_with_scratch(&mut a, &mut scratch);
                    scale
                } else {
                    1.0
                };
                for v in a.iter_mut() {
                    let z = *v * norm;
                    let phase = self.gamma * z.norm_sqr() * h_eff;
                    max_phase = max_phase.max(phase);
                    *v = z * Complex64::from_polar(decay, phase);
                }
                if self.dispersive {
                    self.forward.process_with_scratch(&mut a, &mut scratch);
                    mul(&mut a, if step + 1 == self.steps { &self.half } else { &self.full });
                }
            }
            let norm = if self.dispersive {
                self.backward.process_with_scratch(&mut a, &mut scratch);
                scale
            } else {
                1.0
            };
            a.iter_mut().for_each(|v| *v *= norm * amp_gain);
            if let Some(r) = rng.as_deref_mut() {
                r.add_noise(&mut a, noise_psd / f64::from(self.n_span) / self.dt);
            }
        }
        if max_phase > MAX_STEP_PHASE {
            log::warn!(
                "nonlinear phase per step reaches {max_phase:.3} rad (> {MAX_STEP_PHASE}); consider a smaller step_km"
            );
        }
        Ok((
            WdmFrame {
                field: SampledWaveform {
                    samples: a,
                    dt: self.dt,
                    n_symbols: frame.field.n_symbols,
                },
                channel_spacing: frame.channel_spacing,
                rx_samples_per_symbol: frame.rx_samples_per_symbol,
            },
            PropagationReport {
                steps_per_span: self.steps,
                step_m: h,
                max_step_phase: max_phase,
            },
        ))
    }
}

fn mul(a: &mut [Complex64], op: &[Complex64]) {
    a.iter_mut().zip(op).for_each(|(v, o)| *v *= o);
}

/// One-shot propagation; see [`Propagator`] to reuse the plans across blocks.
pub fn propagate(
    frame: &WdmFrame,
    fiber: &FiberParams,
    cfg: &SsfmCfg,
    noise_psd: f64,
    rng: Option<&mut NoiseStream>,
) -> Result<(WdmFrame, PropagationReport)> {
    Propagator::new(fiber, cfg, frame.field.samples.len(), frame.field.dt)?.run(frame, noise_psd, rng)
}

/// Undo dispersion β₂ over `length` metres on the whole frame, then cut out
/// each channel, bring it to baseband and resample to the receiver grid.
pub fn demux_and_cdc(frame: &WdmFrame, beta2: f64, length: f64) -> Result<[SampledWaveform; 2]> {
    let n2 = frame.field.samples.len();
    let nsym = frame.field.n_symbols;
    let dt2 = frame.field.dt;
    let n1 = nsym * frame.rx_samples_per_symbol;
    let dt1 = dt2 * n2 as f64 / n1 as f64;
    let df = 1.0 / (n2 as f64 * dt2);
    let plan = band_plan(df, frame.channel_spacing, n2, dt2)?;
    let mut s = spectrum(&frame.field.samples);
    mul(&mut s, &dispersion_operator(n2, dt2, beta2, -length));
    let scale = n1 as f64 / n2 as f64;
    let extract = |sign: i64| {
        let mut out = vec![Complex64::new(0.0, 0.0); n1];
        let c = plan.cutoff.ceil() as i64;
        for kk in -c..=c {
            if (kk as f64).abs() < plan.cutoff {
                out[wrap_bin(kk, n1)] = s[wrap_bin(kk + sign * plan.shift, n2)] * scale;
            }
        }
        SampledWaveform {
            samples: inverse(out),
            dt: dt1,
            n_symbols: nsym,
        }
    };
    Ok([extract(-1), extract(1)])
}

/// Relative L2 distance ‖a − b‖/‖b‖.
pub fn relative_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{modulate, Constellation, PulseKind, PulseShape};

    const T: f64 = 1e-10;

    fn symbols(n: usize, seed: u64, es: f64) -> Vec<Complex64> {
        let c = Constellation::qam16(es);
        let mut rng = NoiseStream::new(seed, 0);
        (0..n).map(|_| c.points()[c.index_from_uniform(rng.uniform())]).collect()
    }

    fn pulse() -> PulseShape {
        PulseShape::new(PulseKind::TruncatedGaussian { fwhm: 0.5 }, 100, T).unwrap()
    }

    fn es(dbm: f64) -> f64 {
        crate::physparams::dbm_to_watt(dbm) * T
    }

    fn frame(n: usize, dbm: f64) -> (SampledWaveform, SampledWaveform, WdmFrame) {
        let p = pulse();
        let a = modulate(&symbols(n, 1, es(dbm)), &p);
        let b = modulate(&symbols(n, 2, es(dbm)), &p);
        let f = mux(&a, &b, 40e9, 16).unwrap();
        (a, b, f)
    }

    fn fiber(beta2: f64, gamma: f64, atten: f64) -> FiberParams {
        let mut f = FiberParams::reference();
        f.beta2 = beta2;
        f.gamma = gamma;
        f.attenuation_db = atten;
        f
    }

    #[test]
    fn silent_second_channel_and_tones() {
        let p = pulse();
        let a = modulate(&symbols(64, 3, es(0.0)), &p);
        let zero = SampledWaveform { samples: vec![Complex64::new(0.0, 0.0); a.samples.len()], dt: a.dt, n_symbols: 64 };
        let f = mux(&a, &zero, 40e9, 16).unwrap();
        let s = spectrum(&f.field.samples);
        let n = s.len();
        let df = 1.0 / (n as f64 * f.field.dt);
        for (k, v) in s.iter().enumerate() {
            let fk = signed_bin(k, n) as f64 * df;
            if (fk + 20e9).abs() >= 10e9 {
                assert!(v.norm() < 1e-12 * a.samples.len() as f64, "leak at {fk}");
            }
        }
        // constant inputs become lines at ∓Δf/2
        let one = SampledWaveform { samples: vec![Complex64::new(1.0, 0.0); 6400], dt: a.dt, n_symbols: 64 };
        let f = mux(&one, &one, 40e9, 16).unwrap();
        let s = spectrum(&f.field.samples);
        let n = s.len();
        let mut big: Vec<i64> = (0..n).filter(|&k| s[k].norm() > 1e-6).map(|k| signed_bin(k, n)).collect();
        big.sort();
        let shift = (20e9 / df) as i64;
        assert_eq!(big, vec![-shift, shift]);
    }

    #[test]
    fn filtering_never_adds_energy() {
        let p = pulse();
        let a = modulate(&symbols(128, 4, 1.0), &p);
        let filtered = brick_wall(&a, 40e9);
        assert!(filtered.energy() <= a.energy());
        let again = brick_wall(&filtered, 40e9);
        assert!((again.energy() / filtered.energy() - 1.0).abs() < 1e-12);
        let (_, _, f) = frame(128, 0.0);
        let both = brick_wall(&a, 40e9).energy() + brick_wall(&modulate(&symbols(128, 2, 1.0), &p), 40e9).energy();
        assert!(f.energy() > 0.0 && both > 0.0);
    }

    #[test]
    fn aliasing_rejected() {
        let p = pulse();
        let a = modulate(&symbols(16, 5, 1.0), &p);
        assert!(matches!(mux(&a, &a, 40e9, 2), Err(Error::Aliasing { .. })));
        assert!(matches!(mux(&a, &a, 40e9, 8), Ok(_)));
    }

    #[test]
    fn dispersion_is_all_pass_and_conserves_energy() {
        let (_, _, f) = frame(128, 10.0);
        let cfg = SsfmCfg::default();
        let (out, _) = propagate(&f, &fiber(-21.7, 0.0, 0.0), &cfg, 0.0, None).unwrap();
        let a = spectrum(&f.field.samples);
        let b = spectrum(&out.field.samples);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.norm() - y.norm()).abs() <= 1e-9 * a.iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
        let (out, r) = propagate(&f, &fiber(-21.7, 1.27, 0.0), &cfg, 0.0, None).unwrap();
        assert!((out.energy() / f.energy() - 1.0).abs() < 1e-9);
        assert_eq!(r.steps_per_span, 1500);
    }

    #[test]
    fn zero_dispersion_gives_pointwise_phase() {
        let (_, _, f) = frame(64, 8.0);
        let cfg = SsfmCfg { step_km: 1.0, ..SsfmCfg::default() };
        for atten in [0.0, 0.25] {
            let fib = fiber(0.0, 1.27, atten);
            let eta = fib.derive().unwrap().eta;
            let (out, _) = propagate(&f, &fib, &cfg, 0.0, None).unwrap();
            for (a, b) in f.field.samples.iter().zip(&out.field.samples) {
                let want = a * Complex64::from_polar(1.0, eta * a.norm_sqr());
                assert!((b - want).norm() < 1e-9 * a.norm().max(1e-3 * f.field.samples[0].norm()) + 1e-15);
            }
        }
    }

    #[test]
    fn linear_round_trip() {
        let (a, b, f) = frame(128, 5.0);
        let fib = fiber(-21.7, 0.0, 0.25);
        let (out, _) = propagate(&f, &fib, &SsfmCfg { step_km: 5.0, ..SsfmCfg::default() }, 0.0, None).unwrap();
        let [r1, r2] = demux_and_cdc(&out, fib.beta2_s2_per_m(), fib.span_length_m()).unwrap();
        let g = 16 * 100;
        assert!(relative_l2(&r1.samples[g..r1.samples.len() - g], &brick_wall(&a, 40e9).samples[g..a.samples.len() - g]) < 1e-9);
        assert!(relative_l2(&r2.samples, &brick_wall(&b, 40e9).samples) < 1e-9);
        // no fibre at all
        let [r1, _] = demux_and_cdc(&f, fib.beta2_s2_per_m(), 0.0).unwrap();
        assert!(relative_l2(&r1.samples, &brick_wall(&a, 40e9).samples) < 1e-12);
    }

    #[test]
    fn dispersion_then_compensation_is_identity() {
        let (_, _, f) = frame(64, 0.0);
        let n = f.field.samples.len();
        let mut s = spectrum(&f.field.samples);
        mul(&mut s, &dispersion_operator(n, f.field.dt, -2.17e-26, 150e3));
        mul(&mut s, &dispersion_operator(n, f.field.dt, -2.17e-26, -150e3));
        assert!(relative_l2(&inverse(s), &f.field.samples) < 1e-12);
    }

    #[test]
    fn noise_level_per_sample() {
        let (_, _, f) = frame(512, 0.0);
        let silent = WdmFrame { field: SampledWaveform { samples: vec![Complex64::new(0.0, 0.0); f.field.samples.len()], ..f.field.clone() }, ..f.clone() };
        let fib = fiber(0.0, 0.0, 0.25);
        let n0 = 1.43e-15;
        let mut rng = NoiseStream::new(9, 9);
        let (out, _) = propagate(&silent, &fib, &SsfmCfg { step_km: 50.0, ..SsfmCfg::default() }, n0, Some(&mut rng)).unwrap();
        let var = out.field.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / out.field.samples.len() as f64;
        assert!((var / (n0 / f.field.dt) - 1.0).abs() < 0.05, "{}", var / (n0 / f.field.dt));
    }

    #[test]
    fn halving_the_step_converges() {
        let (_, _, f) = frame(64, 4.0);
        let fib = fiber(-1.27, 1.27, 0.25);
        let coarse = propagate(&f, &fib, &SsfmCfg { step_km: 0.2, ..SsfmCfg::default() }, 0.0, None).unwrap().0;
        let fine = propagate(&f, &fib, &SsfmCfg { step_km: 0.1, ..SsfmCfg::default() }, 0.0, None).unwrap().0;
        let finer = propagate(&f, &fib, &SsfmCfg { step_km: 0.05, ..SsfmCfg::default() }, 0.0, None).unwrap().0;
        let e1 = relative_l2(&coarse.field.samples, &fine.field.samples);
        let e2 = relative_l2(&fine.field.samples, &finer.field.samples);
        assert!(e2 < 1e-4, "{e2:e}");
        // second-order scheme: error ratio near 4
        assert!(e1 / e2 > 3.0 && e1 / e2 < 5.0, "{e1:e} {e2:e}");
    }
}
