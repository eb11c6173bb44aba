//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for failures
//! while running.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{asymptotic_check, run_sweep, scatter_dump, write_asymptotic_csv, write_scatter_csv, write_ser_csv};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "nlwdm", version, about = "SER simulation for a two-user nonlinear WDM link")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path; overrides [output].path, stdout when neither is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides [sweep].seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Print η, N₀, L_eff and G for the [fiber] section.
    DeriveParams,
    /// Run the SER sweep of the [sweep] section.
    SerSweep,
    /// Dump demodulator outputs for the [scatter] section.
    Scatter,
    /// Measure the triangular-pulse high-power limits of the [asymptotic] section.
    AsymptoticCheck,
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?
            .install(f),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.sweep.seed = seed;
    }
    let out_path = cli.out.or_else(|| cfg.output.path.clone());
    let hash = cfg.config_hash();
    let exp = cfg.experiment();
    match cli.command {
        Command::DeriveParams => {
            let d = cfg.fiber.derive()?;
            let mut w = output(out_path.as_ref())?;
            writeln!(w, "eta={:.2} /W", d.eta)?;
            writeln!(w, "noise_psd={:.4e} W/Hz", d.noise_psd)?;
            writeln!(w, "eff_length={:.2} km", d.eff_length)?;
            writeln!(w, "gain={:.4} ({:.2} dB)", d.gain_linear, 10.0 * d.gain_linear.log10())?;
            w.flush()?;
        }
        Command::SerSweep => {
            let result = with_pool(cli.threads, || run_sweep(&exp, &hash))?;
            write_ser_csv(output(out_path.as_ref())?, &result.records, &hash)?;
        }
        Command::Scatter => {
            let s = &cfg.scatter;
            let rows = scatter_dump(&exp, s.power_dbm, s.demod, s.n_symbols)?;
            write_scatter_csv(output(out_path.as_ref())?, &rows, &hash)?;
        }
        Command::AsymptoticCheck => {
            let a = &cfg.asymptotic;
            let report = with_pool(cli.threads, || asymptotic_check(&exp, a.power_dbm, a.n_symbols, &hash))?;
            for e in &report.entries {
                log::info!("{}: SER {:.4} (limit {:.4})", e.receiver, e.ser, e.limit);
            }
            write_asymptotic_csv(output(out_path.as_ref())?, &report, &hash)?;
        }
    }
    Ok(())
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const FIBER: &str = "[fiber]\nspan_length = 150.0\nattenuation_db = 0.25\ngamma = 1.27\nn_span = 1\nsymbol_rate = 10e9\nphoton_energy = 1.28e-19\nnoise_figure_db = 6.0\n";

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn run_args(args: &[&str]) -> u8 {
        main_with_args(std::iter::once("nlwdm").chain(args.iter().copied()))
    }

    #[test]
    fn derive_params_prints_constants() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "a.cfg", FIBER);
        let out = dir.path().join("p.txt");
        assert_eq!(run_args(&["derive-params", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("eta=22.06 /W"), "{text}");
        assert!(text.contains("eff_length=17.37 km"));

        let lossless = write(dir.path(), "b.cfg", &FIBER.replace("attenuation_db = 0.25", "attenuation_db = 0.0"));
        assert_eq!(run_args(&["derive-params", "--config", lossless.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        assert!(std::fs::read_to_string(&out).unwrap().contains("eff_length=150.00 km"));
    }

    #[test]
    fn config_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write(dir.path(), "m.cfg", &FIBER.replace("gamma = 1.27\n", ""));
        assert_eq!(run_args(&["derive-params", "--config", missing.to_str().unwrap()]), EXIT_CONFIG);
        assert_eq!(run_args(&["derive-params", "--config", "/nonexistent/x.cfg"]), EXIT_CONFIG);
        assert_eq!(run_args(&["derive-params"]), EXIT_CONFIG);
        assert_eq!(run_args(&["no-such-command"]), EXIT_CONFIG);
        let gaussian = write(dir.path(), "g.cfg", FIBER);
        assert_eq!(run_args(&["asymptotic-check", "--config", gaussian.to_str().unwrap()]), EXIT_CONFIG);
    }

    #[test]
    fn runtime_errors_exit_with_three() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "a.cfg", &format!("{FIBER}[sweep]\npower_grid_dbm = [0.0]\nmax_symbols = 10\n"));
        let out = dir.path().join("no/such/dir/out.csv");
        assert_eq!(run_args(&["ser-sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_RUNTIME);
    }

    #[test]
    fn sweep_output_is_reproducible_and_seed_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{FIBER}[sweep]\npower_grid_dbm = [-4.0, 6.0]\nmax_symbols = 2000\n");
        let cfg = write(dir.path(), "s.cfg", &text);
        let c = cfg.to_str().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let s = dir.path().join("s.csv");
        assert_eq!(run_args(&["ser-sweep", "--config", c, "--out", a.to_str().unwrap()]), 0);
        assert_eq!(run_args(&["ser-sweep", "--config", c, "--out", b.to_str().unwrap(), "--threads", "2"]), 0);
        let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(ta, tb);
        let first = String::from_utf8(ta).unwrap();
        let hash = RunConfig::load(&cfg).unwrap().config_hash();
        assert_eq!(first.lines().next().unwrap(), format!("# nlwdm {} config_hash={hash}", env!("CARGO_PKG_VERSION")));
        assert_eq!(first.lines().count(), 2 + 2 * 7);
        assert_eq!(run_args(&["ser-sweep", "--config", c, "--out", s.to_str().unwrap(), "--seed", "5"]), 0);
        let other = std::fs::read_to_string(&s).unwrap();
        assert_ne!(first.lines().next(), other.lines().next());
        assert!(other.lines().nth(2).unwrap().contains(",5,"));
    }

    #[test]
    fn scatter_header_only_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "s.cfg", &format!("{FIBER}[scatter]\npower_dbm = 5.0\ndemod = \"mxm\"\nn_symbols = 0\n"));
        let out = dir.path().join("o.csv");
        assert_eq!(run_args(&["scatter", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "symbol_index,tx_symbol_re,tx_symbol_im,out_re,out_im,demod_name");

        let cfg = write(dir.path(), "t.cfg", &format!("{FIBER}[scatter]\npower_dbm = 5.0\ndemod = \"mxm\"\nn_symbols = 30\n"));
        assert_eq!(run_args(&["scatter", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 32);
        assert!(text.lines().last().unwrap().starts_with("29,") && text.ends_with("mxm\n"));
    }

    #[test]
    fn bundled_recipes_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes");
        for name in ["fig2.cfg", "fig3.cfg", "fig4.cfg", "asymptotic.cfg"] {
            let cfg = RunConfig::load(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.fiber.span_length, 150.0);
        }
    }
}
