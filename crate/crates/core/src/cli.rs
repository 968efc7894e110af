//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::channel::{sinr_db, NoiseConfig, PathlossModel};
use crate::config::RunConfig;
use crate::engine::{self, SweepAxis};
use crate::error::{Error, Result};
use crate::metrics::{self, sig6, MetricsStore};
use crate::scenario::VehicleState;

#[derive(Debug, Parser)]
#[command(name = "cv2x-sim", version, about = "Mode-4 sidelink SPS simulator with transmit power control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML configuration file; the built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, replacing the configured one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-key override, e.g. `policy.kind=adaptive` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its metrics.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation per value along an axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values, e.g. `0,5,10,15,20` or `fixed,adaptive`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Analytic SINR of one of two equal-power colliding transmitters
    /// along the line through both (no simulation, no shadowing).
    SinrCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Transmitter separation in meters.
        #[arg(long, default_value_t = 1000.0)]
        separation: f64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 5.0, 10.0, 15.0, 20.0])]
        powers: Vec<f64>,
        /// Receiver position step in meters.
        #[arg(long, default_value_t = 10.0)]
        step: f64,
    },
    /// Check a configuration and print it fully resolved.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    #[value(name = "tx_powers")]
    TxPowers,
    Densities,
    Policies,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::TxPowers => SweepAxis::TxPowers,
            AxisArg::Densities => SweepAxis::Densities,
            AxisArg::Policies => SweepAxis::Policies,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn load(common: &Common) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

/// Files written into an output directory, removed again if the command
/// fails part-way.
struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn open(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.written.push(path.clone());
        std::fs::write(path, contents)?;
        Ok(())
    }

    fn discard(self) {
        if self.created_dir {
            let _ = std::fs::remove_dir_all(&self.dir);
        } else {
            for p in self.written.iter().rev() {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

pub fn vehicles_csv(vehicles: &[VehicleState]) -> String {
    let mut out = String::from("id,position_m,speed_mps,hpm_node,tx_offset,hpm_phase\n");
    for v in vehicles {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            v.id,
            sig6(v.position),
            sig6(v.speed),
            v.is_hpm_node,
            v.tx_offset,
            v.hpm_phase
        );
    }
    out
}

fn write_run(out: &mut Outputs, prefix: &str, cfg: &RunConfig, store: &MetricsStore) -> Result<()> {
    out.write(&format!("{prefix}prr.csv"), &metrics::prr_csv(store))?;
    out.write(&format!("{prefix}cbr.csv"), &metrics::cbr_csv(store))?;
    out.write(&format!("{prefix}threshold.csv"), &metrics::threshold_csv(store))?;
    out.write(&format!("{prefix}ia.csv"), &metrics::ia_csv(store))?;
    out.write(&format!("{prefix}summary.json"), &metrics::summary_json(store))?;
    out.write(&format!("{prefix}config.toml"), &cfg.to_toml_string())?;
    out.write(&format!("{prefix}vehicles.csv"), &vehicles_csv(&engine::vehicles(cfg)?))?;
    if let Some(rows) = &store.trace {
        out.write(&format!("{prefix}trace.csv"), &metrics::trace_csv(rows))?;
    }
    Ok(())
}

/// SINR of the transmitter at position 0 against an equal-power
/// interferer at `separation`, for receivers from `-separation` to
/// `separation`. Rows are `(power_dbm, position_m, sinr_db)`.
pub fn sinr_curve(
    pathloss: &PathlossModel,
    noise: &NoiseConfig,
    separation: f64,
    powers: &[f64],
    step: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::config("sinr-curve: separation must be positive"));
    }
    if !(step > 0.0 && step <= separation) {
        return Err(Error::config("sinr-curve: step must be in (0, separation]"));
    }
    if powers.is_empty() || powers.iter().any(|p| !p.is_finite()) {
        return Err(Error::config("sinr-curve: need at least one finite power"));
    }
    let steps = (2.0 * separation / step).round() as i64;
    let mut rows = Vec::new();
    for &p in powers {
        for k in 0..=steps {
            let x = -separation + k as f64 * step;
            let target = p - pathloss.pathloss_db(x.abs());
            let interferer = p - pathloss.pathloss_db((separation - x).abs());
            rows.push((p, x, sinr_db(target, &[interferer], noise)));
        }
    }
    Ok(rows)
}

fn run_command(common: &Common, out_dir: &Path) -> Result<()> {
    let cfg = load(common)?;
    let store = engine::run(&cfg)?;
    let mut out = Outputs::open(out_dir)?;
    match write_run(&mut out, "", &cfg, &store) {
        Ok(()) => Ok(()),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn sweep_command(common: &Common, out_dir: &Path, axis: SweepAxis, values: &[String], jobs: usize) -> Result<()> {
    let base = load(common)?;
    let configs = engine::sweep_configs(&base, axis, values)?;
    let results = engine::run_many(&configs, jobs);
    let mut out = Outputs::open(out_dir)?;
    let mut index = String::from("run,axis,value,seed,status\n");
    let mut first_err = None;
    for (k, ((cfg, res), value)) in configs.iter().zip(results).zip(values).enumerate() {
        let status = match res {
            Ok(store) => match write_run(&mut out, &format!("run_{k:03}/"), cfg, &store) {
                Ok(()) => "ok".to_string(),
                Err(e) => {
                    out.discard();
                    return Err(e);
                }
            },
            Err(e) => {
                let msg = format!("error: {e}");
                first_err.get_or_insert(e);
                msg.replace(',', ";")
            }
        };
        let _ = writeln!(index, "run_{k:03},{},{},{},{status}", axis.as_str(), value.trim(), cfg.seed);
    }
    out.write("sweep.csv", &index)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sinr_curve_command(common: &Common, out_dir: &Path, separation: f64, powers: &[f64], step: f64) -> Result<()> {
    let cfg = load(common)?;
    let noise = NoiseConfig {
        noise_floor_dbm: cfg.channel.noise_floor_dbm,
    };
    let pathloss = PathlossModel {
        shadowing_sigma_db: 0.0,
        ..cfg.channel.pathloss.clone()
    };
    let rows = sinr_curve(&pathloss, &noise, separation, powers, step)?;
    let mut csv = String::from("power_dbm,position_m,sinr_db\n");
    for (p, x, s) in rows {
        let _ = writeln!(csv, "{},{},{}", sig6(p), sig6(x), sig6(s));
    }
    let mut out = Outputs::open(out_dir)?;
    if let Err(e) = out.write("sinr_curve.csv", &csv) {
        out.discard();
        return Err(e);
    }
    Ok(())
}

fn validate_command(common: &Common) -> Result<String> {
    Ok(load(common)?.to_toml_string())
}

/// Parses `args` (including the program name) and executes the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run { common, out } => run_command(common, out),
        Command::Sweep {
            common,
            out,
            axis,
            values,
            jobs,
        } => sweep_command(common, out, (*axis).into(), values, *jobs),
        Command::SinrCurve {
            common,
            out,
            separation,
            powers,
            step,
        } => sinr_curve_command(common, out, *separation, powers, *step),
        Command::Validate { common } => validate_command(common).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("cv2x-sim: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
