//! Sufficient-statistics demodulation.
//!
//! The received real and imaginary parts are projected onto
//! h_ℓ = g·sin(η s_ℓ g²) and h̃_ℓ = g·cos(η s_ℓ g²), ℓ = 1..|S|, giving the
//! 4|S| statistics ordered `[u^R, ũ^R, u^I, ũ^I]`. Conditioned on (s_j, x_i)
//! they are Gaussian with mean μ_ji and a covariance Σ shared by all
//! hypotheses.
//!
//! Σ becomes numerically singular whenever η·s is small (all h_ℓ collapse
//! onto one direction), so detection works in the whitened range of Σ
//! rather than with Σ⁻¹.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use super::PhaseIntegrals;
use crate::error::{Error, Result};
use crate::waveform::{Constellation, InterferenceSet, PulseShape};

/// Eigenvalues below this fraction of the largest are treated as null.
pub const WHITEN_REL_TOL: f64 = 1e-10;

/// The correlator bank h_ℓ, h̃_ℓ for one interference set.
#[derive(Debug, Clone)]
pub struct SsBasis {
    levels: Vec<f64>,
    eta: f64,
    pulse: PulseShape,
    h: Vec<Vec<f64>>,
    h_tilde: Vec<Vec<f64>>,
}

impl SsBasis {
    pub fn new(interference: &InterferenceSet, eta: f64, pulse: PulseShape) -> Self {
        Self::from_levels(interference.values().to_vec(), eta, pulse)
    }

    pub fn from_levels(levels: Vec<f64>, eta: f64, pulse: PulseShape) -> Self {
        let g = pulse.samples();
        let (h, h_tilde) = levels
            .iter()
            .map(|&s| {
                g.iter()
                    .map(|&gk| {
                        let (sin, cos) = (eta * s * gk * gk).sin_cos();
                        (gk * sin, gk * cos)
                    })
                    .unzip()
            })
            .unzip();
        Self {
            levels,
            eta,
            pulse,
            h,
            h_tilde,
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn pulse(&self) -> &PulseShape {
        &self.pulse
    }

    pub fn h(&self, l: usize) -> &[f64] {
        &self.h[l]
    }

    pub fn h_tilde(&self, l: usize) -> &[f64] {
        &self.h_tilde[l]
    }

    /// Dimension 4|S| of the statistic.
    pub fn dim(&self) -> usize {
        4 * self.levels.len()
    }
}

/// The 4|S| real projections `[u^R, ũ^R, u^I, ũ^I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsStatistics {
    pub u: Vec<f64>,
}

impl SsStatistics {
    /// Split into the four |S|-blocks.
    pub fn blocks(&self, n: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (r, i) = self.u.split_at(2 * n);
        let (ur, utr) = r.split_at(n);
        let (ui, uti) = i.split_at(n);
        (ur, utr, ui, uti)
    }
}

pub fn ss_project(rx: &[Complex64], basis: &SsBasis) -> Result<SsStatistics> {
    let n = basis.pulse.samples_per_symbol();
    if rx.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: rx.len(),
        });
    }
    let m = basis.levels.len();
    let dt = basis.pulse.dt();
    let mut u = vec![0.0; 4 * m];
    for l in 0..m {
        let (mut ur, mut utr, mut ui, mut uti) = (0.0, 0.0, 0.0, 0.0);
        for ((a, h), ht) in rx.iter().zip(&basis.h[l]).zip(&basis.h_tilde[l]) {
            ur += a.re * h;
            utr += a.re * ht;
            ui += a.im * h;
            uti += a.im * ht;
        }
        u[l] = ur * dt;
        u[m + l] = utr * dt;
        u[2 * m + l] = ui * dt;
        u[3 * m + l] = uti * dt;
    }
    Ok(SsStatistics { u })
}

/// Conditional means μ_ji, stored for every (level j, own point i).
#[derive(Debug, Clone)]
pub struct SsMeans {
    n_points: usize,
    means: Vec<Vec<f64>>,
}

impl SsMeans {
    pub fn get(&self, j: usize, i: usize) -> &[f64] {
        &self.means[j * self.n_points + i]
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_levels(&self) -> usize {
        self.means.len() / self.n_points.max(1)
    }
}

/// μ_ji from the closed-form combinations of F_s, F_c at s_ℓ ± s_j.
pub fn ss_means(
    constellation: &Constellation,
    interference: &InterferenceSet,
    basis: &SsBasis,
) -> SsMeans {
    let f = PhaseIntegrals::new(basis.eta, &basis.pulse);
    let levels = &basis.levels;
    let m = levels.len();
    let mut means = Vec::with_capacity(interference.len() * constellation.len());
    for &sj in interference.values() {
        for x in constellation.points() {
            let (re, im) = (x.re, x.im);
            let mut mu = vec![0.0; 4 * m];
            for (l, &sl) in levels.iter().enumerate() {
                let (fs_p, fc_p) = f.pair(sl + sj);
                let (fs_m, fc_m) = f.pair(sl - sj);
                mu[l] = re * fs_p + re * fs_m + im * fc_p - im * fc_m;
                mu[m + l] = re * fc_p + re * fc_m - im * fs_p + im * fs_m;
                mu[2 * m + l] = -re * fc_p + re * fc_m + im * fs_p + im * fs_m;
                mu[3 * m + l] = re * fs_p - re * fs_m + im * fc_p + im * fc_m;
            }
            means.push(mu);
        }
    }
    SsMeans {
        n_points: constellation.len(),
        means,
    }
}

/// Noise covariance of the SS statistic.
///
/// Block layout: diag(B, B) with B = [[Σ¹¹, Σ¹²], [Σ¹²ᵀ, Σ²²]]; the real and
/// imaginary quadratures are uncorrelated.
pub fn ss_covariance(basis: &SsBasis, noise_psd: f64) -> DMatrix<f64> {
    let f = PhaseIntegrals::new(basis.eta, &basis.pulse);
    let levels = &basis.levels;
    let m = levels.len();
    let half = 0.5 * noise_psd;
    let mut sigma = DMatrix::zeros(4 * m, 4 * m);
    for (k, &sk) in levels.iter().enumerate() {
        for (l, &sl) in levels.iter().enumerate() {
            let (fs_p, fc_p) = f.pair(sk + sl);
            let (fs_m, fc_m) = f.pair(sk - sl);
            let s11 = half * (fc_m - fc_p);
            let s12 = half * (fs_p + fs_m);
            let s22 = half * (fc_p + fc_m);
            for off in [0, 2 * m] {
                sigma[(off + k, off + l)] = s11;
                sigma[(off + k, off + m + l)] = s12;
                sigma[(off + m + l, off + k)] = s12;
                sigma[(off + m + k, off + m + l)] = s22;
            }
        }
    }
    sigma
}

/// Gaussian model restricted to the retained eigenspace of Σ and scaled to
/// unit noise variance.
#[derive(Debug, Clone)]
pub struct WhitenedModel {
    /// Rows are Λ^{-1/2} qᵀ for the retained eigenpairs.
    transform: DMatrix<f64>,
    means: Vec<DVector<f64>>,
    retained_eigenvalues: Vec<f64>,
}

/// Eigen-decompose Σ, keep eigenvalues above `WHITEN_REL_TOL · λ_max`, and
/// map every mean into the whitened subspace.
pub fn whiten(sigma: &DMatrix<f64>, means: &[&[f64]]) -> Result<WhitenedModel> {
    let d = sigma.nrows();
    if sigma.ncols() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: sigma.ncols(),
        });
    }
    let sym = 0.5 * (sigma + sigma.transpose());
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < -WHITEN_REL_TOL * max {
        return Err(Error::NotPositiveSemidefinite { min, max });
    }
    let mut keep: Vec<usize> = (0..d)
        .filter(|&k| eig.eigenvalues[k] > WHITEN_REL_TOL * max)
        .collect();
    // descending eigenvalue order gives a stable row layout
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut transform = DMatrix::zeros(keep.len(), d);
    for (row, &k) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt().recip();
        for c in 0..d {
            transform[(row, c)] = eig.eigenvectors[(c, k)] * scale;
        }
    }
    let mut model = WhitenedModel {
        transform,
        means: Vec::with_capacity(means.len()),
        retained_eigenvalues: keep.iter().map(|&k| eig.eigenvalues[k]).collect(),
    };
    for mu in means {
        let z = model.project(mu)?;
        model.means.push(z);
    }
    Ok(model)
}

impl WhitenedModel {
    pub fn rank(&self) -> usize {
        self.transform.nrows()
    }

    pub fn dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.retained_eigenvalues
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn project(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: u.len(),
            });
        }
        Ok(&self.transform * DVector::from_column_slice(u))
    }

    /// Whitened mean number `k`, in the order given to [`whiten`].
    pub fn mean(&self, k: usize) -> &DVector<f64> {
        &self.means[k]
    }

    pub fn n_means(&self) -> usize {
        self.means.len()
    }

    /// ‖z − μ_k‖² in whitened coordinates.
    pub fn distance_sq(&self, z: &DVector<f64>, k: usize) -> f64 {
        z.iter()
            .zip(self.means[k].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Gaussian log-density up to the hypothesis-independent constant.
    pub fn log_density(&self, z: &DVector<f64>, k: usize) -> f64 {
        -0.5 * self.distance_sq(z, k)
    }
}

/// Means, covariance and whitened form of the SS statistic for one operating point.
#[derive(Debug, Clone)]
pub struct SsModel {
    pub means: SsMeans,
    pub covariance: DMatrix<f64>,
    /// Whitened means are indexed `j * n_points + i`.
    pub whitened: WhitenedModel,
}

impl SsModel {
    pub fn new(
        constellation: &Constellation,
        interference: &InterferenceSet,
        basis: &SsBasis,
        noise_psd: f64,
    ) -> Result<Self> {
        let means = ss_means(constellation, interference, basis);
        let covariance = ss_covariance(basis, noise_psd);
        let refs: Vec<&[f64]> = means.means.iter().map(|v| v.as_slice()).collect();
        let whitened = whiten(&covariance, &refs)?;
        Ok(Self {
            means,
            covariance,
            whitened,
        })
    }

    pub fn whitened_index(&self, j: usize, i: usize) -> usize {
        j * self.means.n_points + i
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{MemorylessChannel, NoiseStream};
    use crate::demod::mfs;
    use crate::waveform::PulseKind;

    const T: f64 = 1e-10;
    const ETA: f64 = 22.1;
    const N0: f64 = 1.43e-15;

    fn es(dbm: f64) -> f64 {
        crate::physparams::dbm_to_watt(dbm) * T
    }

    fn setup(dbm: f64, eta: f64) -> (Constellation, InterferenceSet, SsBasis) {
        let c = Constellation::qam16(es(dbm));
        let set = InterferenceSet::build(&c, &c);
        let pulse = PulseShape::new(PulseKind::TruncatedGaussian { fwhm: 0.5 }, 100, T).unwrap();
        let basis = SsBasis::new(&set, eta, pulse);
        (c, set, basis)
    }

    /// (N₀/2)·Gram matrix of the stacked correlators, computed directly.
    fn gram_oracle(basis: &SsBasis, n0: f64) -> DMatrix<f64> {
        let m = basis.levels().len();
        let funcs: Vec<&[f64]> = (0..m).map(|l| basis.h(l)).chain((0..m).map(|l| basis.h_tilde(l))).collect();
        let dt = basis.pulse().dt();
        let mut out = DMatrix::zeros(4 * m, 4 * m);
        for a in 0..2 * m {
            for b in 0..2 * m {
                let ip: f64 = funcs[a].iter().zip(funcs[b]).map(|(x, y)| x * y).sum::<f64>() * dt;
                out[(a, b)] = 0.5 * n0 * ip;
                out[(2 * m + a, 2 * m + b)] = 0.5 * n0 * ip;
            }
        }
        out
    }

    #[test]
    fn projection_of_zero_and_linear_case() {
        let (c, _, basis) = setup(0.0, 0.0);
        let zero = vec![Complex64::new(0.0, 0.0); 100];
        assert!(ss_project(&zero, &basis).unwrap().u.iter().all(|v| *v == 0.0));
        let ch = MemorylessChannel::new(0.0, N0, basis.pulse().clone()).unwrap();
        let rx = ch.propagate_symbol(c.points()[5], c.points()[2], &mut NoiseStream::new(1, 2));
        let v = mfs(&rx.samples, basis.pulse()).unwrap();
        let u = ss_project(&rx.samples, &basis).unwrap();
        let (ur, utr, ui, uti) = u.blocks(7);
        for l in 0..7 {
            assert_eq!(ur[l], 0.0);
            assert_eq!(ui[l], 0.0);
            assert!((utr[l] - v.re).abs() < 1e-12 * v.norm());
            assert!((uti[l] - v.im).abs() < 1e-12 * v.norm());
        }
        assert!(ss_project(&zero[1..], &basis).is_err());
    }

    #[test]
    fn means_match_noiseless_projection() {
        for dbm in [-10.0, 0.0, 8.0, 16.0] {
            let (c, set, basis) = setup(dbm, ETA);
            let means = ss_means(&c, &set, &basis);
            let ch = MemorylessChannel::new(ETA, 0.0, basis.pulse().clone()).unwrap();
            let mut rx = vec![Complex64::new(0.0, 0.0); 100];
            for (j, &s) in set.values().iter().enumerate() {
                for (i, x) in c.points().iter().enumerate() {
                    ch.write_noiseless(*x, s, &mut rx);
                    let u = ss_project(&rx, &basis).unwrap();
                    let mu = means.get(j, i);
                    let scale = x.norm();
                    for (a, b) in u.u.iter().zip(mu) {
                        assert!((a - b).abs() < 1e-9 * scale, "P={dbm} j={j} i={i}: {a} {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn means_vanish_for_zero_symbol_and_reduce_when_linear() {
        let pts = vec![Complex64::new(0.0, 0.0), Complex64::new(1e-6, 0.0)];
        let c = Constellation::new(pts, vec![0.5, 0.5]).unwrap();
        let set = InterferenceSet::build(&c, &c);
        let pulse = PulseShape::new(PulseKind::Triangular, 64, T).unwrap();
        let basis = SsBasis::new(&set, ETA, pulse.clone());
        let means = ss_means(&c, &set, &basis);
        for j in 0..set.len() {
            assert!(means.get(j, 0).iter().all(|v| *v == 0.0));
        }
        let lin = SsBasis::new(&set, 0.0, pulse);
        let means = ss_means(&c, &set, &lin);
        let m = set.len();
        for j in 0..m {
            let mu = means.get(j, 1);
            for l in 0..m {
                assert_eq!(mu[l], 0.0);
                assert!((mu[m + l] - 1e-6).abs() < 1e-18);
                assert!(mu[2 * m + l].abs() < 1e-20 && mu[3 * m + l].abs() < 1e-20);
            }
        }
    }

    #[test]
    fn covariance_linear_structure() {
        let (_, _, basis) = setup(0.0, 0.0);
        let s = ss_covariance(&basis, N0);
        let m = 7;
        for a in 0..m {
            for b in 0..m {
                for off in [0, 2 * m] {
                    assert_eq!(s[(off + a, off + b)], 0.0);
                    assert_eq!(s[(off + a, off + m + b)], 0.0);
                    assert!((s[(off + m + a, off + m + b)] / (0.5 * N0) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_matches_gram_and_block_zeros() {
        for dbm in [-10.0, 2.0, 12.0] {
            let (_, _, basis) = setup(dbm, ETA);
            let s = ss_covariance(&basis, N0);
            let g = gram_oracle(&basis, N0);
            let m = 7;
            for a in 0..4 * m {
                for b in 0..4 * m {
                    assert!((s[(a, b)] - g[(a, b)]).abs() < 1e-9 * 0.5 * N0, "({a},{b})");
                    let cross = (a < 2 * m) != (b < 2 * m);
                    if cross {
                        assert_eq!(s[(a, b)], 0.0);
                    }
                }
            }
            assert_eq!(s, s.transpose());
        }
    }

    #[test]
    fn covariance_matches_empirical_noise() {
        let (_, _, basis) = setup(6.0, ETA);
        let s = ss_covariance(&basis, N0);
        let ch = MemorylessChannel::new(ETA, N0, basis.pulse().clone()).unwrap();
        let mut rng = NoiseStream::new(17, 0);
        let d = basis.dim();
        let mut acc = DMatrix::<f64>::zeros(d, d);
        let trials = 100_000;
        let mut buf = vec![Complex64::new(0.0, 0.0); 100];
        for _ in 0..trials {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            rng.add_noise(&mut buf, ch.sample_variance());
            let u = DVector::from_vec(ss_project(&buf, &basis).unwrap().u);
            acc += &u * u.transpose();
        }
        acc /= trials as f64;
        let max_eig = SymmetricEigen::new(s.clone()).eigenvalues.max();
        let worst = (&acc - &s).abs().max();
        assert!(worst < 0.05 * max_eig, "{worst:e} vs {max_eig:e}");
    }

    #[test]
    fn whitening_isotropic_and_rank_deficient() {
        let c = 3.0;
        let sigma = DMatrix::identity(5, 5) * c;
        let mu = [1.0, 2.0, 3.0, 4.0, 5.0];
        let w = whiten(&sigma, &[&mu]).unwrap();
        assert_eq!(w.rank(), 5);
        let z = w.mean(0);
        assert!((z.norm() - DVector::from_column_slice(&mu).norm() / c.sqrt()).abs() < 1e-12);

        let (c16, set, basis) = setup(0.0, 0.0);
        let model = SsModel::new(&c16, &set, &basis, N0).unwrap();
        assert_eq!(model.whitened.rank(), 2);
        // the whitened statistic is the MFS output scaled by sqrt(2/N0), up to sign
        let ch = MemorylessChannel::new(0.0, N0, basis.pulse().clone()).unwrap();
        let rx = ch.propagate_symbol(c16.points()[9], c16.points()[1], &mut NoiseStream::new(2, 2));
        let v = mfs(&rx.samples, basis.pulse()).unwrap();
        let z = model.whitened.project(&ss_project(&rx.samples, &basis).unwrap().u).unwrap();
        assert!((z.norm() - v.norm() * (2.0 / N0).sqrt()).abs() < 1e-9 * z.norm());
    }

    #[test]
    fn whitening_rejects_indefinite() {
        let mut sigma = DMatrix::identity(3, 3);
        sigma[(2, 2)] = -0.5;
        assert!(matches!(whiten(&sigma, &[]), Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn whitened_matches_dense_gaussian_full_rank() {
        // random SPD Σ = AᵀA + εI and random means
        let mut rng = NoiseStream::new(99, 0);
        for d in [3usize, 8, 14] {
            let a = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
            let sigma = a.transpose() * &a + DMatrix::identity(d, d) * 0.1;
            let mus: Vec<Vec<f64>> = (0..6).map(|_| (0..d).map(|_| 2.0 * rng.standard_normal()).collect()).collect();
            let refs: Vec<&[f64]> = mus.iter().map(|v| v.as_slice()).collect();
            let w = whiten(&sigma, &refs).unwrap();
            assert_eq!(w.rank(), d);
            let inv = sigma.clone().cholesky().unwrap().inverse();
            for _ in 0..20 {
                let u: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
                let z = w.project(&u).unwrap();
                let dense = |k: usize| {
                    let diff = DVector::from_column_slice(&u) - DVector::from_column_slice(&mus[k]);
                    -0.5 * (diff.transpose() * &inv * &diff)[(0, 0)]
                };
                for k in 1..6 {
                    let lhs = w.log_density(&z, k) - w.log_density(&z, 0);
                    let rhs = dense(k) - dense(0);
                    assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0), "{lhs} {rhs}");
                }
            }
        }
    }

    #[test]
    fn whitened_distances_symmetric() {
        let (c, set, basis) = setup(4.0, ETA);
        let model = SsModel::new(&c, &set, &basis, N0).unwrap();
        let w = &model.whitened;
        for a in [0usize, 5, 17, 40] {
            assert_eq!(w.distance_sq(w.mean(a), a), 0.0);
            for b in [3usize, 22, 60] {
                let ab = w.distance_sq(w.mean(a), b);
                let ba = w.distance_sq(w.mean(b), a);
                assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
            }
        }
    }

    #[test]
    fn covariance_is_psd_across_powers() {
        for dbm in [-10.0, -3.0, 4.0, 10.0, 16.0] {
            let (_, _, basis) = setup(dbm, ETA);
            let s = ss_covariance(&basis, N0);
            let e = SymmetricEigen::new(s).eigenvalues;
            assert!(e.min() >= -1e-10 * e.max(), "P={dbm}");
        }
    }
}
