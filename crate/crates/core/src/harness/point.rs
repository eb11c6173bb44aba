//! Models and per-batch evaluation for one power point.

use num_complex::Complex64;

use super::{ChannelKind, Experiment, ReceiverKind};
use crate::channel::{MemorylessChannel, NoiseStream};
use crate::demod::{mfs, mxm_from_statistics, ss_project, SsBasis, SsModel};
use crate::detect::{bps_recover, map_mfs, map_ss, md, ts, MapMfsModel, MapSsModel, TsThresholds};
use crate::error::Result;
use crate::physparams::{dbm_to_watt, DerivedParams};
use crate::ssfm::{demux_and_cdc, mux, Propagator};
use crate::waveform::{modulate, Constellation, InterferenceSet, PulseShape};

/// Everything the receivers need at one launch power.
pub(crate) struct PointModels<'a> {
    exp: &'a Experiment,
    receivers: Vec<ReceiverKind>,
    pub constellation: Constellation,
    pub interferer: Constellation,
    pub pulse: PulseShape,
    pub channel: MemorylessChannel,
    map_mfs: Option<MapMfsModel>,
    basis: Option<SsBasis>,
    map_ss: Option<MapSsModel>,
    ts: Option<TsThresholds>,
    propagator: Option<&'a Propagator>,
    pub warnings: Vec<String>,
}

impl<'a> PointModels<'a> {
    pub fn new(
        exp: &'a Experiment,
        derived: &DerivedParams,
        power_dbm: f64,
        propagator: Option<&'a Propagator>,
    ) -> Result<Self> {
        let sweep = &exp.sweep;
        let period = exp.fiber.symbol_period();
        let es = dbm_to_watt(power_dbm) * period;
        let base = Constellation::square_qam(sweep.qam_order, 1.0)?;
        let constellation = match &sweep.priors {
            Some(p) => base.with_priors(p.clone())?,
            None => base,
        }
        .scaled_to(es)?;
        let interferer = Constellation::square_qam(sweep.qam_order, es)?;
        let set = InterferenceSet::build(&constellation, &interferer);
        let pulse = PulseShape::new(sweep.pulse, sweep.samples_per_symbol, period)?;
        let n0 = derived.noise_psd;
        let eta_rx = sweep.eta_override.unwrap_or(derived.eta);
        let channel = MemorylessChannel::new(derived.eta, n0, pulse.clone())?;

        let mut warnings = Vec::new();
        let s_max = set.values().last().copied().unwrap_or(0.0);
        if let Some(w) = channel.resolution_warning(s_max) {
            warnings.push(format!("{power_dbm} dBm: {w}"));
        }
        let wants = |r: ReceiverKind| sweep.receivers.contains(&r);
        let map_mfs = wants(ReceiverKind::MfsMap)
            .then(|| MapMfsModel::new(&constellation, &set, eta_rx, &pulse, n0))
            .transpose()?;
        let needs_basis = [ReceiverKind::SsMap, ReceiverKind::MxmMd, ReceiverKind::MxmTs]
            .iter()
            .any(|r| wants(*r));
        let basis = needs_basis.then(|| SsBasis::new(&set, eta_rx, pulse.clone()));
        let map_ss = match (&basis, wants(ReceiverKind::SsMap)) {
            (Some(b), true) => Some(MapSsModel::new(
                SsModel::new(&constellation, &set, b, n0)?,
                &constellation,
                &set,
            )),
            _ => None,
        };
        let ts = wants(ReceiverKind::MxmTs)
            .then(|| TsThresholds::for_constellation(&constellation, n0))
            .transpose()?;
        if let Some(t) = &ts {
            if !t.fallbacks.is_empty() {
                warnings.push(format!(
                    "{power_dbm} dBm: TS thresholds {:?} fell back to the ring midpoint",
                    t.fallbacks
                ));
            }
        }
        Ok(Self {
            exp,
            receivers: sweep.receivers.clone(),
            constellation,
            interferer,
            pulse,
            channel,
            map_mfs,
            basis,
            map_ss,
            ts,
            propagator,
            warnings,
        })
    }

    /// Demodulate and detect one batch, returning errors per receiver for
    /// receivers flagged in `active` (others report zero).
    pub fn run_batch(&self, stream_id: u64, n_count: usize, active: &[bool]) -> Result<Vec<u64>> {
        let mut rng = NoiseStream::new(self.exp.sweep.seed, stream_id);
        match self.exp.sweep.channel {
            ChannelKind::Memoryless => self.memoryless_batch(&mut rng, n_count, active),
            ChannelKind::Ssfm => self.ssfm_batch(&mut rng, n_count, active),
        }
    }

    fn draw(&self, rng: &mut NoiseStream) -> (usize, Complex64) {
        let i1 = self.constellation.index_from_uniform(rng.uniform());
        let x2 = self.interferer.points()[self.interferer.index_from_uniform(rng.uniform())];
        (i1, x2)
    }

    fn memoryless_batch(&self, rng: &mut NoiseStream, n: usize, active: &[bool]) -> Result<Vec<u64>> {
        let spp = self.pulse.samples_per_symbol();
        let mut noiseless = vec![Complex64::new(0.0, 0.0); spp];
        let mut noise = vec![Complex64::new(0.0, 0.0); spp];
        let mut tx = Vec::with_capacity(n);
        let mut rx = Vec::with_capacity(n * spp);
        let mut ref_rx = Vec::with_capacity(n * spp);
        let zero = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let (i1, x2) = self.draw(rng);
            let x1 = self.constellation.points()[i1];
            let s = x1.norm_sqr() + 2.0 * x2.norm_sqr();
            self.channel.write_noiseless(x1, s, &mut noiseless);
            noise.iter_mut().for_each(|v| *v = zero);
            rng.add_noise(&mut noise, self.channel.sample_variance());
            rx.extend(noiseless.iter().zip(&noise).map(|(a, b)| a + b));
            ref_rx.extend(self.pulse.samples().iter().zip(&noise).map(|(g, b)| x1 * g + b));
            tx.push(i1);
        }
        self.detect_all(&tx, &rx, &ref_rx, active)
    }

    fn ssfm_batch(&self, rng: &mut NoiseStream, n_count: usize, active: &[bool]) -> Result<Vec<u64>> {
        let cfg = &self.exp.ssfm;
        let prop = self.propagator.expect("ssfm channel needs a propagator");
        let nb = cfg.block_symbols();
        let mut i1s = Vec::with_capacity(nb);
        let mut x1s = Vec::with_capacity(nb);
        let mut x2s = Vec::with_capacity(nb);
        for _ in 0..nb {
            let (i1, x2) = self.draw(rng);
            i1s.push(i1);
            x1s.push(self.constellation.points()[i1]);
            x2s.push(x2);
        }
        let fiber = &self.exp.fiber;
        let w1 = modulate(&x1s, &self.pulse);
        let w2 = modulate(&x2s, &self.pulse);
        let frame = mux(&w1, &w2, fiber.channel_spacing, cfg.samples_per_symbol)?;
        let (out, _) = prop.run(&frame, self.channel.noise_psd(), Some(rng))?;
        let total_length = fiber.span_length_m() * f64::from(fiber.n_span);
        let [r1, _] = demux_and_cdc(&out, fiber.beta2_s2_per_m(), total_length)?;
        let spp = self.pulse.samples_per_symbol();
        let range = cfg.guard_symbols..cfg.guard_symbols + n_count.min(cfg.n_symbols_per_block);
        let rx = r1.samples[range.start * spp..range.end * spp].to_vec();
        let tx = i1s[range.clone()].to_vec();
        // back-to-back reference with its own noise draws
        let mut ref_rx = Vec::with_capacity(rx.len());
        for &i1 in &tx {
            let x1 = self.constellation.points()[i1];
            for g in self.pulse.samples() {
                ref_rx.push(x1 * g + rng.complex_gaussian(self.channel.sample_variance()));
            }
        }
        self.detect_all(&tx, &rx, &ref_rx, active)
    }

    fn detect_all(&self, tx: &[usize], rx: &[Complex64], ref_rx: &[Complex64], active: &[bool]) -> Result<Vec<u64>> {
        let spp = self.pulse.samples_per_symbol();
        let c = &self.constellation;
        let mut errors = vec![0u64; self.receivers.len()];
        let slot = |r: ReceiverKind| {
            self.receivers
                .iter()
                .position(|x| *x == r)
                .filter(|&k| active[k])
        };
        let (k_md, k_pr, k_map, k_ss, k_mxm, k_ts, k_ref) = (
            slot(ReceiverKind::MfsMd),
            slot(ReceiverKind::MfsPr),
            slot(ReceiverKind::MfsMap),
            slot(ReceiverKind::SsMap),
            slot(ReceiverKind::MxmMd),
            slot(ReceiverKind::MxmTs),
            slot(ReceiverKind::AwgnRef),
        );
        let need_mfs = k_md.is_some() || k_pr.is_some() || k_map.is_some();
        let need_ss = k_ss.is_some() || k_mxm.is_some() || k_ts.is_some();
        let mut v_all = Vec::with_capacity(if k_pr.is_some() { tx.len() } else { 0 });
        for (n, &i) in tx.iter().enumerate() {
            let r = &rx[n * spp..(n + 1) * spp];
            if need_mfs {
                let v = mfs(r, &self.pulse)?;
                if let Some(k) = k_md {
                    errors[k] += u64::from(md(v, c) != i);
                }
                if let Some(k) = k_map {
                    errors[k] += u64::from(map_mfs(v, self.map_mfs.as_ref().unwrap()) != i);
                }
                if k_pr.is_some() {
                    v_all.push(v);
                }
            }
            if need_ss {
                let basis = self.basis.as_ref().unwrap();
                let u = ss_project(r, basis)?;
                if let Some(k) = k_ss {
                    errors[k] += u64::from(map_ss(&u, self.map_ss.as_ref().unwrap())? != i);
                }
                if k_mxm.is_some() || k_ts.is_some() {
                    let w = mxm_from_statistics(&u, basis).w;
                    if let Some(k) = k_mxm {
                        errors[k] += u64::from(md(w, c) != i);
                    }
                    if let Some(k) = k_ts {
                        errors[k] += u64::from(ts(w, self.ts.as_ref().unwrap(), c) != i);
                    }
                }
            }
            if let Some(k) = k_ref {
                let v = mfs(&ref_rx[n * spp..(n + 1) * spp], &self.pulse)?;
                errors[k] += u64::from(md(v, c) != i);
            }
        }
        if let Some(k) = k_pr {
            let rot = bps_recover(&v_all, &self.exp.bps, c)?;
            errors[k] = rot.iter().zip(tx).map(|(v, &i)| u64::from(md(*v, c) != i)).sum();
        }
        Ok(errors)
    }
}
