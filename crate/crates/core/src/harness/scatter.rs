//! Demodulator scatter clouds and the high-power asymptotic check.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{run_sweep, write_csv, ChannelKind, Experiment, ReceiverKind};
use crate::channel::{MemorylessChannel, NoiseStream};
use crate::demod::{mfs, mxm, SsBasis};
use crate::error::{Error, Result};
use crate::physparams::dbm_to_watt;
use crate::waveform::{Constellation, InterferenceSet, PulseKind, PulseShape};

/// Noise stream reserved for scatter clouds, disjoint from sweep batches.
const SCATTER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScatterDemod {
    Mfs,
    Mxm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub symbol_index: u64,
    pub tx_symbol_re: f64,
    pub tx_symbol_im: f64,
    pub out_re: f64,
    pub out_im: f64,
    pub demod: ScatterDemod,
}

/// Demodulator outputs on the memoryless channel with the transmitted symbols.
pub fn scatter_dump(exp: &Experiment, power_dbm: f64, demod: ScatterDemod, n_symbols: u64) -> Result<Vec<ScatterRow>> {
    exp.validate()?;
    if exp.sweep.channel != ChannelKind::Memoryless {
        return Err(Error::Incompatible("scatter clouds are produced on the memoryless channel".into()));
    }
    let derived = exp.fiber.derive()?;
    let period = exp.fiber.symbol_period();
    let es = dbm_to_watt(power_dbm) * period;
    let own = Constellation::square_qam(exp.sweep.qam_order, es)?;
    let pulse = PulseShape::new(exp.sweep.pulse, exp.sweep.samples_per_symbol, period)?;
    let channel = MemorylessChannel::new(derived.eta, derived.noise_psd, pulse.clone())?;
    let basis = SsBasis::new(
        &InterferenceSet::build(&own, &own),
        exp.sweep.eta_override.unwrap_or(derived.eta),
        pulse.clone(),
    );
    let mut rng = NoiseStream::new(exp.sweep.seed, SCATTER_STREAM);
    (0..n_symbols)
        .map(|k| {
            let x1 = own.points()[own.index_from_uniform(rng.uniform())];
            let x2 = own.points()[own.index_from_uniform(rng.uniform())];
            let rx = channel.propagate_symbol(x1, x2, &mut rng);
            let out: Complex64 = match demod {
                ScatterDemod::Mfs => mfs(&rx.samples, &pulse)?,
                ScatterDemod::Mxm => mxm(&rx.samples, &basis)?.w,
            };
            Ok(ScatterRow {
                symbol_index: k,
                tx_symbol_re: x1.re,
                tx_symbol_im: x1.im,
                out_re: out.re,
                out_im: out.im,
                demod,
            })
        })
        .collect()
}

pub const SCATTER_HEADER: [&str; 6] = ["symbol_index", "tx_symbol_re", "tx_symbol_im", "out_re", "out_im", "demod_name"];

pub fn write_scatter_csv<W: Write>(out: W, rows: &[ScatterRow], config_hash: &str) -> Result<()> {
    write_csv(out, config_hash, &SCATTER_HEADER, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticEntry {
    pub receiver: ReceiverKind,
    pub power_dbm: f64,
    pub symbols: u64,
    pub errors: u64,
    pub ser: f64,
    pub stderr: f64,
    /// SER the receiver approaches as the power grows.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    pub entries: Vec<AsymptoticEntry>,
    pub warnings: Vec<String>,
}

impl AsymptoticReport {
    pub fn get(&self, receiver: ReceiverKind) -> Option<&AsymptoticEntry> {
        self.entries.iter().find(|e| e.receiver == receiver)
    }
}

/// SER of MFS-MAP, MxM-MD and MxM-TS at one high power with a triangular
/// pulse, against their limits 1 − max π_i and 0.
pub fn asymptotic_check(exp: &Experiment, power_dbm: f64, n_symbols: u64, config_hash: &str) -> Result<AsymptoticReport> {
    if exp.sweep.pulse != PulseKind::Triangular {
        return Err(Error::Incompatible("the asymptotic check needs a triangular pulse".into()));
    }
    if exp.sweep.channel != ChannelKind::Memoryless {
        return Err(Error::Incompatible("the asymptotic check runs on the memoryless channel".into()));
    }
    let mut e = exp.clone();
    e.sweep.power_grid_dbm = vec![power_dbm];
    e.sweep.receivers = vec![ReceiverKind::MfsMap, ReceiverKind::MxmMd, ReceiverKind::MxmTs];
    e.sweep.min_errors = u64::MAX;
    e.sweep.max_symbols = n_symbols;
    let max_prior = match &e.sweep.priors {
        Some(p) => p.iter().cloned().fold(0.0, f64::max),
        None => 1.0 / e.sweep.qam_order as f64,
    };
    let out = run_sweep(&e, config_hash)?;
    let entries = out
        .records
        .iter()
        .map(|r| AsymptoticEntry {
            receiver: r.receiver,
            power_dbm: r.power_dbm,
            symbols: r.symbols,
            errors: r.errors,
            ser: r.ser,
            stderr: r.stderr,
            limit: if r.receiver == ReceiverKind::MfsMap { 1.0 - max_prior } else { 0.0 },
        })
        .collect();
    Ok(AsymptoticReport {
        entries,
        warnings: out.warnings,
    })
}

pub const ASYMPTOTIC_HEADER: [&str; 7] = ["receiver", "power_dbm", "symbols", "errors", "ser", "stderr", "limit"];

pub fn write_asymptotic_csv<W: Write>(out: W, report: &AsymptoticReport, config_hash: &str) -> Result<()> {
    write_csv(out, config_hash, &ASYMPTOTIC_HEADER, &report.entries)
}
