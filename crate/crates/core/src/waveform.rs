//! Pulse shapes, constellations, interference levels and the discrete
//! inner product on the sampling grid.
//!
//! All waveforms live on a uniform grid of `samples_per_symbol` cells per
//! symbol period. Sample `k` of a pulse is taken at the cell midpoint
//! `(k + 1/2)·dt`, so every integral over one period becomes the Riemann sum
//! `Σ f_k dt`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance used when merging interference levels.
pub const LEVEL_MERGE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PulseKind {
    /// Gaussian centred at T/2 with amplitude FWHM `fwhm·T`, truncated to (0, T].
    TruncatedGaussian { fwhm: f64 },
    Triangular,
    Rectangular,
}

/// A real unit-energy pulse supported on one symbol period.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShape {
    kind: PulseKind,
    symbol_period: f64,
    samples: Vec<f64>,
}

impl PulseShape {
    pub fn new(kind: PulseKind, samples_per_symbol: usize, symbol_period: f64) -> Result<Self> {
        if samples_per_symbol < 2 {
            return Err(invalid("samples_per_symbol", "must be >= 2"));
        }
        if !(symbol_period.is_finite() && symbol_period > 0.0) {
            return Err(invalid("symbol_period", "must be finite and > 0"));
        }
        let n = samples_per_symbol;
        let t_mid = |k: usize| (k as f64 + 0.5) / n as f64;
        let mut samples: Vec<f64> = match kind {
            PulseKind::TruncatedGaussian { fwhm } => {
                if !(fwhm > 0.0 && fwhm < 2.0) {
                    return Err(invalid("fwhm", format!("must lie in (0, 2), got {fwhm}")));
                }
                let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
                (0..n)
                    .map(|k| {
                        let u = t_mid(k) - 0.5;
                        (-u * u / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
            PulseKind::Triangular => (0..n).map(|k| 0.5 - (0.5 - t_mid(k)).abs()).collect(),
            PulseKind::Rectangular => vec![1.0; n],
        };
        let dt = symbol_period / n as f64;
        let energy: f64 = samples.iter().map(|g| g * g).sum::<f64>() * dt;
        let scale = energy.sqrt().recip();
        samples.iter_mut().for_each(|g| *g *= scale);
        Ok(Self {
            kind,
            symbol_period,
            samples,
        })
    }

    pub fn kind(&self) -> PulseKind {
        self.kind
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.samples.len()
    }

    pub fn symbol_period(&self) -> f64 {
        self.symbol_period
    }

    pub fn dt(&self) -> f64 {
        self.symbol_period / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|g| g * g).sum::<f64>() * self.dt()
    }

    /// Largest |d g²/dt| over the grid, by finite differences.
    pub fn max_slope_of_square(&self) -> f64 {
        let dt = self.dt();
        let sq: Vec<f64> = self.samples.iter().map(|g| g * g).collect();
        // the pulse is zero outside the period, so include both edges
        let mut max = sq[0] / (0.5 * dt);
        for w in sq.windows(2) {
            max = max.max((w[1] - w[0]).abs() / dt);
        }
        max.max(sq[sq.len() - 1] / (0.5 * dt))
    }
}

/// A finite input alphabet with its prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    priors: Vec<f64>,
}

impl Constellation {
    pub fn new(points: Vec<Complex64>, priors: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("points", "a constellation needs at least two points"));
        }
        let c = Self { points, priors };
        c.check()?;
        Ok(c)
    }

    /// The degenerate alphabet {0}: an interferer that never transmits.
    pub fn silent() -> Self {
        Self {
            points: vec![Complex64::new(0.0, 0.0)],
            priors: vec![1.0],
        }
    }

    fn check(&self) -> Result<()> {
        if self.priors.len() != self.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                actual: self.priors.len(),
            });
        }
        if self.priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("priors", "must be finite and nonnegative"));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("priors", format!("must sum to 1, sum is {total}")));
        }
        for (i, a) in self.points.iter().enumerate() {
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(invalid("points", "must be finite"));
            }
            if self.points[..i].iter().any(|b| b == a) {
                return Err(invalid("points", "must be distinct"));
            }
        }
        Ok(())
    }

    /// Square M-QAM on the odd-integer grid, uniform prior, scaled to mean energy `es`.
    ///
    /// Point `i` has in-phase level `i / side` and quadrature level `i % side`.
    pub fn square_qam(order: usize, es: f64) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if side < 2 || side * side != order {
            return Err(invalid("order", format!("{order} is not a square >= 4")));
        }
        let levels: Vec<f64> = (0..side).map(|k| 2.0 * k as f64 - (side as f64 - 1.0)).collect();
        let points = levels
            .iter()
            .flat_map(|&re| levels.iter().map(move |&im| Complex64::new(re, im)))
            .collect();
        let c = Self::new(points, vec![1.0 / order as f64; order])?;
        c.scaled_to(es)
    }

    pub fn qam16(es: f64) -> Self {
        Self::square_qam(16, es).expect("16 is a valid order")
    }

    /// Replace the prior, keeping the points.
    pub fn with_priors(&self, priors: Vec<f64>) -> Result<Self> {
        let c = Self {
            points: self.points.clone(),
            priors,
        };
        c.check()?;
        Ok(c)
    }

    /// Rescale the points so the prior-weighted mean energy equals `es`.
    pub fn scaled_to(&self, es: f64) -> Result<Self> {
        if !(es.is_finite() && es > 0.0) {
            return Err(invalid("es", "must be finite and > 0"));
        }
        let current = self.symbol_energy();
        if current <= 0.0 {
            return Err(invalid("points", "zero-energy constellation cannot be scaled"));
        }
        let k = (es / current).sqrt();
        Ok(Self {
            points: self.points.iter().map(|p| p * k).collect(),
            priors: self.priors.clone(),
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// E|x|² under the prior.
    pub fn symbol_energy(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.priors)
            .map(|(x, p)| p * x.norm_sqr())
            .sum()
    }

    /// Draw a point index from the prior given a uniform variate in [0, 1).
    pub fn index_from_uniform(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u within rounding of 1: the last point with nonzero mass
        self.priors.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs())
}

/// Merge sorted values whose relative distance is within `rtol`.
fn merge_sorted(values: &mut Vec<f64>, rtol: f64) {
    values.sort_by(f64::total_cmp);
    values.dedup_by(|b, a| close(*a, *b, rtol));
}

/// The finite set of interference levels s = |x₁|² + 2|x₂|² together with
/// Pr(s = s_j | |x₁| = r_c).
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceSet {
    values: Vec<f64>,
    /// `cond_prob[j][c]`: level `j`, amplitude class `c`.
    cond_prob: Vec<Vec<f64>>,
    amplitude_classes: Vec<f64>,
    class_of: Vec<usize>,
}

impl InterferenceSet {
    pub fn build(own: &Constellation, interferer: &Constellation) -> Self {
        let mut energies: Vec<f64> = own.points().iter().map(|x| x.norm_sqr()).collect();
        merge_sorted(&mut energies, LEVEL_MERGE_RTOL);
        let class_of: Vec<usize> = own
            .points()
            .iter()
            .map(|x| {
                let e = x.norm_sqr();
                energies
                    .iter()
                    .position(|&c| c == e || close(c, e, LEVEL_MERGE_RTOL))
                    .expect("every energy has a class")
            })
            .collect();

        let mut values: Vec<f64> = energies
            .iter()
            .flat_map(|&e| interferer.points().iter().map(move |x2| e + 2.0 * x2.norm_sqr()))
            .collect();
        merge_sorted(&mut values, LEVEL_MERGE_RTOL);

        let level_of = |s: f64| {
            values
                .iter()
                .position(|&v| v == s || close(v, s, LEVEL_MERGE_RTOL))
                .expect("level was enumerated")
        };
        let mut cond_prob = vec![vec![0.0; energies.len()]; values.len()];
        for (c, &e) in energies.iter().enumerate() {
            for (x2, p2) in interferer.points().iter().zip(interferer.priors()) {
                cond_prob[level_of(e + 2.0 * x2.norm_sqr())][c] += p2;
            }
        }
        Self {
            values,
            cond_prob,
            amplitude_classes: energies.iter().map(|e| e.sqrt()).collect(),
            class_of,
        }
    }

    /// Sorted interference levels [J].
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Distinct amplitudes |x_i| of the own alphabet, ascending.
    pub fn amplitude_classes(&self) -> &[f64] {
        &self.amplitude_classes
    }

    /// Amplitude class of own-constellation point `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.class_of[i]
    }

    /// Pr(s = s_j | |x₁| in amplitude class `c`).
    pub fn cond_prob(&self, j: usize, c: usize) -> f64 {
        self.cond_prob[j][c]
    }

    /// Pr(s = s_j | x₁ = x_i) for own point `i`.
    pub fn cond_prob_for_point(&self, j: usize, i: usize) -> f64 {
        self.cond_prob[j][self.class_of[i]]
    }

    pub fn level_index(&self, s: f64) -> Option<usize> {
        self.values
            .iter()
            .position(|&v| v == s || close(v, s, LEVEL_MERGE_RTOL))
    }
}

/// Complex baseband samples on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub samples: Vec<Complex64>,
    pub dt: f64,
    pub n_symbols: usize,
}

impl SampledWaveform {
    pub fn samples_per_symbol(&self) -> usize {
        if self.n_symbols == 0 {
            0
        } else {
            self.samples.len() / self.n_symbols
        }
    }

    /// The samples of symbol interval `i`.
    pub fn symbol(&self, i: usize) -> &[Complex64] {
        let n = self.samples_per_symbol();
        &self.samples[i * n..(i + 1) * n]
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dt
    }
}

/// Linear modulation with a single-period pulse: symbols never overlap.
pub fn modulate(symbols: &[Complex64], pulse: &PulseShape) -> SampledWaveform {
    let g = pulse.samples();
    let samples = symbols
        .iter()
        .flat_map(|x| g.iter().map(move |gk| x * gk))
        .collect();
    SampledWaveform {
        samples,
        dt: pulse.dt(),
        n_symbols: symbols.len(),
    }
}

/// ⟨f, g⟩ = Σ f_k conj(g_k) dt.
pub fn inner(f: &[Complex64], g: &[Complex64], dt: f64) -> Result<Complex64> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: f.len(),
            actual: g.len(),
        });
    }
    Ok(f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<Complex64>() * dt)
}

/// ⟨f, g⟩ for a real second argument.
pub fn inner_real(f: &[Complex64], g: &[f64], dt: f64) -> Result<Complex64> {
    if f.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: f.len(),
            actual: g.len(),
        });
    }
    Ok(f.iter().zip(g).map(|(a, b)| a * b).sum::<Complex64>() * dt)
}
