//! Monte Carlo symbol-error-rate engine.
//!
//! Every receiver at a power point sees the same transmitted symbols and
//! the same received waveforms, so receiver comparisons use common random
//! numbers. Symbols are processed in fixed-size batches; batch `b` at power
//! index `p` draws from its own ChaCha stream `(p << 32) | b`, and batch
//! results are merged in batch order. The outcome therefore depends only on
//! the configuration and seed, never on the thread count.

mod point;
mod scatter;

pub use scatter::{
    asymptotic_check, scatter_dump, write_asymptotic_csv, write_scatter_csv, AsymptoticEntry,
    AsymptoticReport, ScatterDemod, ScatterRow,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::BpsConfig;
use crate::error::{invalid, Error, Result};
use crate::physparams::FiberParams;
use crate::ssfm::{Propagator, SsfmCfg};
use crate::waveform::PulseKind;
use point::PointModels;

/// Points that reach the symbol cap with fewer errors than this are censored.
pub const CENSOR_ERRORS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiverKind {
    MfsMd,
    MfsPr,
    MfsMap,
    SsMap,
    MxmMd,
    MxmTs,
    AwgnRef,
}

impl ReceiverKind {
    pub const ALL: [ReceiverKind; 7] = [
        ReceiverKind::MfsMd,
        ReceiverKind::MfsPr,
        ReceiverKind::MfsMap,
        ReceiverKind::SsMap,
        ReceiverKind::MxmMd,
        ReceiverKind::MxmTs,
        ReceiverKind::AwgnRef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::MfsMd => "mfs-md",
            ReceiverKind::MfsPr => "mfs-pr",
            ReceiverKind::MfsMap => "mfs-map",
            ReceiverKind::SsMap => "ss-map",
            ReceiverKind::MxmMd => "mxm-md",
            ReceiverKind::MxmTs => "mxm-ts",
            ReceiverKind::AwgnRef => "awgn-ref",
        }
    }
}

impl fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReceiverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown receiver `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    #[default]
    Memoryless,
    Ssfm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    #[serde(default)]
    pub power_grid_dbm: Vec<f64>,
    #[serde(default = "all_receivers")]
    pub receivers: Vec<ReceiverKind>,
    #[serde(default = "default_min_errors")]
    pub min_errors: u64,
    #[serde(default = "default_max_symbols")]
    pub max_symbols: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelKind,
    #[serde(default = "default_pulse")]
    pub pulse: PulseKind,
    /// Receiver-grid samples per symbol.
    #[serde(default = "default_spp")]
    pub samples_per_symbol: usize,
    #[serde(default = "default_order")]
    pub qam_order: usize,
    /// Prior of the channel-1 alphabet; uniform when absent.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    /// Symbols per batch on the memoryless channel.
    #[serde(default = "default_batch")]
    pub batch_symbols: usize,
    /// Nonlinearity assumed by the receivers instead of the derived η.
    #[serde(default)]
    pub eta_override: Option<f64>,
}

fn all_receivers() -> Vec<ReceiverKind> {
    ReceiverKind::ALL.to_vec()
}
fn default_min_errors() -> u64 {
    100
}
fn default_max_symbols() -> u64 {
    10_000_000
}
fn default_seed() -> u64 {
    1
}
fn default_pulse() -> PulseKind {
    PulseKind::TruncatedGaussian { fwhm: 0.5 }
}
fn default_spp() -> usize {
    100
}
fn default_order() -> usize {
    16
}
fn default_batch() -> usize {
    1024
}

impl SweepCfg {
    pub fn new(power_grid_dbm: Vec<f64>) -> Self {
        Self {
            power_grid_dbm,
            receivers: all_receivers(),
            min_errors: default_min_errors(),
            max_symbols: default_max_symbols(),
            seed: default_seed(),
            channel: ChannelKind::default(),
            pulse: default_pulse(),
            samples_per_symbol: default_spp(),
            qam_order: default_order(),
            priors: None,
            batch_symbols: default_batch(),
            eta_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.power_grid_dbm.iter().any(|p| !p.is_finite()) {
            return Err(invalid("power_grid_dbm", "must hold finite values"));
        }
        if self.receivers.is_empty() {
            return Err(invalid("receivers", "must name at least one receiver"));
        }
        for (k, r) in self.receivers.iter().enumerate() {
            if self.receivers[..k].contains(r) {
                return Err(invalid("receivers", format!("`{r}` listed twice")));
            }
        }
        if self.min_errors < 1 {
            return Err(invalid("min_errors", "must be >= 1"));
        }
        if self.max_symbols < 1 {
            return Err(invalid("max_symbols", "must be >= 1"));
        }
        if self.batch_symbols < 1 {
            return Err(invalid("batch_symbols", "must be >= 1"));
        }
        if let Some(p) = &self.priors {
            if p.len() != self.qam_order {
                return Err(invalid("priors", format!("need {} values, got {}", self.qam_order, p.len())));
            }
        }
        if let Some(e) = self.eta_override {
            if !(e.is_finite() && e >= 0.0) {
                return Err(invalid("eta_override", "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// All configuration a sweep depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub fiber: FiberParams,
    pub sweep: SweepCfg,
    pub ssfm: SsfmCfg,
    pub bps: BpsConfig,
}

impl Experiment {
    /// Reference link, memoryless channel, default receiver settings.
    pub fn reference(power_grid_dbm: Vec<f64>) -> Self {
        Self {
            fiber: FiberParams::reference(),
            sweep: SweepCfg::new(power_grid_dbm),
            ssfm: SsfmCfg::default(),
            bps: BpsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        self.sweep.validate()?;
        self.ssfm.validate()?;
        self.bps.validate()
    }

    fn batch_symbols(&self) -> usize {
        match self.sweep.channel {
            ChannelKind::Memoryless => self.sweep.batch_symbols,
            ChannelKind::Ssfm => self.ssfm.n_symbols_per_block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SerRecord {
    pub power_dbm: f64,
    pub receiver: ReceiverKind,
    pub symbols: u64,
    pub errors: u64,
    pub ser: f64,
    pub stderr: f64,
    pub censored: bool,
    pub seed: u64,
    pub config_hash: String,
}

impl SerRecord {
    fn new(power_dbm: f64, receiver: ReceiverKind, symbols: u64, errors: u64, seed: u64, hash: &str) -> Self {
        let ser = errors as f64 / symbols as f64;
        Self {
            power_dbm,
            receiver,
            symbols,
            errors,
            ser,
            stderr: (ser * (1.0 - ser) / symbols as f64).sqrt(),
            censored: errors < CENSOR_ERRORS,
            seed,
            config_hash: hash.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<SerRecord>,
    pub warnings: Vec<String>,
}

impl SweepOutput {
    pub fn get(&self, power_dbm: f64, receiver: ReceiverKind) -> Option<&SerRecord> {
        self.records
            .iter()
            .find(|r| r.receiver == receiver && r.power_dbm == power_dbm)
    }

    /// Records of one receiver in power-grid order.
    pub fn curve(&self, receiver: ReceiverKind) -> Vec<&SerRecord> {
        self.records.iter().filter(|r| r.receiver == receiver).collect()
    }
}

fn stream_id(power_index: usize, batch: u64) -> u64 {
    ((power_index as u64) << 32) | batch
}

pub fn run_sweep(exp: &Experiment, config_hash: &str) -> Result<SweepOutput> {
    exp.validate()?;
    let sweep = &exp.sweep;
    if sweep.power_grid_dbm.is_empty() {
        return Err(invalid("power_grid_dbm", "must not be empty for a sweep"));
    }
    let derived = exp.fiber.derive()?;
    let mut warnings = Vec::new();

    let propagator = match sweep.channel {
        ChannelKind::Memoryless => None,
        ChannelKind::Ssfm => {
            if sweep.receivers.contains(&ReceiverKind::SsMap) {
                warnings.push(
                    "ss-map on the ssfm channel is a mismatched receiver: its model ignores dispersion".to_owned(),
                );
            }
            let len = exp.ssfm.block_symbols() * exp.ssfm.samples_per_symbol;
            let dt = exp.fiber.symbol_period() / exp.ssfm.samples_per_symbol as f64;
            Some(Propagator::new(&exp.fiber, &exp.ssfm, len, dt)?)
        }
    };

    let batch = exp.batch_symbols() as u64;
    let n_batches = sweep.max_symbols.div_ceil(batch);
    let chunk = (2 * rayon::current_num_threads()).max(1) as u64;
    let n_rx = sweep.receivers.len();
    let mut records = Vec::with_capacity(sweep.power_grid_dbm.len() * n_rx);

    for (p_idx, &power) in sweep.power_grid_dbm.iter().enumerate() {
        let models = PointModels::new(exp, &derived, power, propagator.as_ref())?;
        warnings.extend(models.warnings.iter().cloned());
        let mut errors = vec![0u64; n_rx];
        let mut symbols = vec![0u64; n_rx];
        let mut done = vec![false; n_rx];
        let mut next = 0u64;
        while next < n_batches && done.iter().any(|d| !d) {
            let active: Vec<bool> = done.iter().map(|d| !d).collect();
            let end = (next + chunk).min(n_batches);
            let results: Vec<Result<(u64, Vec<u64>)>> = (next..end)
                .into_par_iter()
                .map(|b| {
                    let count = batch.min(sweep.max_symbols - b * batch);
                    models
                        .run_batch(stream_id(p_idx, b), count as usize, &active)
                        .map(|e| (count, e))
                })
                .collect();
            for result in results {
                let (count, e) = result?;
                for k in 0..n_rx {
                    if done[k] {
                        continue;
                    }
                    errors[k] += e[k];
                    symbols[k] += count;
                    done[k] = errors[k] >= sweep.min_errors || symbols[k] >= sweep.max_symbols;
                }
            }
            next = end;
        }
        for (k, &r) in sweep.receivers.iter().enumerate() {
            records.push(SerRecord::new(power, r, symbols[k], errors[k], sweep.seed, config_hash));
        }
        log::info!("{power} dBm done");
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SweepOutput { records, warnings })
}

/// First line of every output file.
pub fn provenance_line(config_hash: &str) -> String {
    format!("# nlwdm {} config_hash={config_hash}", env!("CARGO_PKG_VERSION"))
}

pub(crate) fn write_csv<W: Write, T: Serialize>(mut out: W, config_hash: &str, header: &[&str], rows: &[T]) -> Result<()> {
    writeln!(out, "{}", provenance_line(config_hash))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub const SER_HEADER: [&str; 9] = [
    "power_dbm",
    "receiver",
    "symbols",
    "errors",
    "ser",
    "stderr",
    "censored",
    "seed",
    "config_hash",
];

pub fn write_ser_csv<W: Write>(out: W, records: &[SerRecord], config_hash: &str) -> Result<()> {
    write_csv(out, config_hash, &SER_HEADER, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    /// Exact 16-QAM SER in AWGN: 1 − (1 − 1.5·Q(√(Es/(5N₀))))².
    fn qam16_awgn_ser(es: f64, n0: f64) -> f64 {
        let q = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf((es / (5.0 * n0)).sqrt());
        1.0 - (1.0 - 1.5 * q).powi(2)
    }

    fn small(grid: Vec<f64>, receivers: Vec<ReceiverKind>, n: u64) -> Experiment {
        let mut e = Experiment::reference(grid);
        e.sweep.receivers = receivers;
        e.sweep.min_errors = u64::MAX;
        e.sweep.max_symbols = n;
        e
    }

    #[test]
    fn awgn_reference_matches_closed_form() {
        let grid = vec![-10.0, -6.0, -2.0];
        let exp = small(grid.clone(), vec![ReceiverKind::AwgnRef], 20_000);
        let out = run_sweep(&exp, "t").unwrap();
        let n0 = exp.fiber.derive().unwrap().noise_psd;
        for p in grid {
            let r = out.get(p, ReceiverKind::AwgnRef).unwrap();
            let want = qam16_awgn_ser(crate::physparams::dbm_to_watt(p) * 1e-10, n0);
            assert!((r.ser - want).abs() < 3.0 * r.stderr.max(1e-12), "{p}: {} vs {want}", r.ser);
        }
    }

    #[test]
    fn record_bookkeeping() {
        let r = SerRecord::new(1.0, ReceiverKind::MfsMd, 1000, 5, 7, "h");
        assert_eq!(r.ser, 0.005);
        assert!((r.stderr - (0.005f64 * 0.995 / 1000.0).sqrt()).abs() < 1e-18);
        assert!(r.censored);
    }

    #[test]
    fn stopping_rule_and_truncated_batch() {
        let mut exp = small(vec![-8.0], vec![ReceiverKind::MfsMd, ReceiverKind::AwgnRef], 2500);
        exp.sweep.min_errors = 50;
        let out = run_sweep(&exp, "t").unwrap();
        for r in &out.records {
            assert!(r.symbols <= 2500);
            assert!(r.errors >= 50 || r.symbols == 2500);
            // stops at a batch boundary or at the cap
            assert!(r.symbols % 1024 == 0 || r.symbols == 2500);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let exp = small(vec![-4.0, 4.0], ReceiverKind::ALL.to_vec(), 3000);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_sweep(&exp, "t").unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn csv_layout() {
        let exp = small(vec![0.0], vec![ReceiverKind::MfsMd], 500);
        let out = run_sweep(&exp, "abc").unwrap();
        let mut buf = Vec::new();
        write_ser_csv(&mut buf, &out.records, "abc").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# nlwdm {} config_hash=abc", env!("CARGO_PKG_VERSION")));
        assert_eq!(lines[1], SER_HEADER.join(","));
        assert!(lines[2].starts_with("0.0,mfs-md,500,"));
        assert!(lines[2].ends_with(",1,abc"));
    }

    #[test]
    fn validation() {
        let mut exp = small(vec![0.0], vec![ReceiverKind::MfsMd, ReceiverKind::MfsMd], 10);
        assert!(run_sweep(&exp, "").is_err());
        exp.sweep.receivers = vec![ReceiverKind::MfsMd];
        exp.sweep.power_grid_dbm = vec![f64::NAN];
        assert!(run_sweep(&exp, "").is_err());
        assert_eq!("mxm-ts".parse::<ReceiverKind>().unwrap(), ReceiverKind::MxmTs);
        assert!("mxm".parse::<ReceiverKind>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn larger_budget_never_widens_stderr(seed in 0u64..1000, base in 1000u64..3000) {
            let mut exp = small(vec![-6.0], vec![ReceiverKind::MfsMd], base);
            exp.sweep.seed = seed;
            let a = run_sweep(&exp, "").unwrap().records[0].stderr;
            exp.sweep.max_symbols = 4 * base;
            let b = run_sweep(&exp, "").unwrap().records[0].stderr;
            prop_assert!(b <= a);
        }
    }
}
