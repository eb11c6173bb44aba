//! Run configuration read from TOML, one section per component.
//!
//! ```toml
//! [fiber]
//! span_length = 150.0
//! # ...
//! [sweep]
//! power_grid_dbm = [-10.0, -5.0, 0.0]
//! receivers = ["mfs-md", "ss-map"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::BpsConfig;
use crate::error::{invalid, Error, Result};
use crate::harness::{Experiment, ScatterDemod, SweepCfg};
use crate::physparams::FiberParams;
use crate::ssfm::SsfmCfg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterCfg {
    #[serde(default = "default_scatter_power")]
    pub power_dbm: f64,
    #[serde(default = "default_demod")]
    pub demod: ScatterDemod,
    #[serde(default = "default_scatter_symbols")]
    pub n_symbols: u64,
}

fn default_scatter_power() -> f64 {
    -5.0
}
fn default_demod() -> ScatterDemod {
    ScatterDemod::Mfs
}
fn default_scatter_symbols() -> u64 {
    10_000
}

impl Default for ScatterCfg {
    fn default() -> Self {
        Self {
            power_dbm: default_scatter_power(),
            demod: default_demod(),
            n_symbols: default_scatter_symbols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticCfg {
    #[serde(default = "default_asym_power")]
    pub power_dbm: f64,
    #[serde(default = "default_asym_symbols")]
    pub n_symbols: u64,
}

fn default_asym_power() -> f64 {
    30.0
}
fn default_asym_symbols() -> u64 {
    100_000
}

impl Default for AsymptoticCfg {
    fn default() -> Self {
        Self {
            power_dbm: default_asym_power(),
            n_symbols: default_asym_symbols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputCfg {
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fiber: FiberParams,
    #[serde(default = "empty_sweep")]
    pub sweep: SweepCfg,
    #[serde(default)]
    pub ssfm: SsfmCfg,
    #[serde(default)]
    pub bps: BpsConfig,
    #[serde(default)]
    pub scatter: ScatterCfg,
    #[serde(default)]
    pub asymptotic: AsymptoticCfg,
    #[serde(default)]
    pub output: OutputCfg,
}

fn empty_sweep() -> SweepCfg {
    SweepCfg::new(Vec::new())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()?;
        if !self.scatter.power_dbm.is_finite() {
            return Err(invalid("scatter.power_dbm", "must be finite"));
        }
        if !self.asymptotic.power_dbm.is_finite() {
            return Err(invalid("asymptotic.power_dbm", "must be finite"));
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            fiber: self.fiber.clone(),
            sweep: self.sweep.clone(),
            ssfm: self.ssfm.clone(),
            bps: self.bps.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring where output goes.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputCfg::default();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[fiber]
span_length = 150.0
attenuation_db = 0.25
gamma = 1.27
n_span = 1
symbol_rate = 10e9
photon_energy = 1.28e-19
noise_figure_db = 6.0

[sweep]
power_grid_dbm = [-2.0, 0.0]
receivers = ["mfs-md", "ss-map"]
pulse = { kind = "triangular" }
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let a = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(a.fiber, FiberParams::reference());
        assert_eq!(a.sweep.receivers.len(), 2);
        assert_eq!(a.ssfm, SsfmCfg::default());
        let b = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let mut c = a.clone();
        c.output.path = Some("elsewhere.csv".into());
        assert_eq!(a.config_hash(), c.config_hash());
        c.sweep.seed = 99;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let unknown = format!("{BASE}\n[bps]\nwindow = 8\ncolour = 1\n");
        let e = RunConfig::from_toml_str(&unknown).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let missing = BASE.replace("gamma = 1.27\n", "");
        let e = RunConfig::from_toml_str(&missing).unwrap_err();
        assert!(e.to_string().contains("gamma"), "{e}");
        let bad = BASE.replace("\"ss-map\"", "\"ss-mop\"");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let negative = BASE.replace("span_length = 150.0", "span_length = -1.0");
        assert!(matches!(RunConfig::from_toml_str(&negative), Err(Error::InvalidParameter { .. })));
    }
}
