//! Command line front end.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analyze;
use crate::config::{Config, Criterion};
use crate::csvio::{self, fmt_float, write_atomic, MetricsRow};
use crate::error::{Error, Result};
use crate::harness;
use crate::live::{self, LiveConfig};
use crate::stats;

#[derive(Debug, Parser)]
#[command(name = "sharedctl", version, about = "Hybrid shared control for a cart-pendulum swing-up task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Mig,
    Ocip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisTest {
    /// Initial unassisted performance against PRA, per user.
    PraVsSkill,
    /// PRA against same-trial performance, per assisted trial.
    PraVsPerformance,
    /// Paired assisted vs unassisted means, per user.
    Assist,
    /// State-occupancy grid of trial logs.
    Histogram,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
    #[arg(long, value_enum)]
    pub assist: Option<OnOff>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial and write its log and metrics.
    RunTrial {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Cohort member to use (first by default).
        #[arg(long)]
        user: Option<String>,
    },
    /// Run the configured study and write metrics, block summaries and logs.
    RunProtocol {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistical tests over a metrics table, or a histogram over logs.
    Analyze {
        #[arg(long, value_enum)]
        test: AnalysisTest,
        #[arg(long, required_unless_present = "logs")]
        metrics: Option<PathBuf>,
        /// Directory of trial logs (histogram).
        #[arg(long)]
        logs: Option<PathBuf>,
        /// Second log directory subtracted from the first (histogram).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 21)]
        bins: usize,
        #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
        omega_max: f64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve live sessions over WebSocket.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Directory for session trial logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the metrics of a trial log.
    ReplayMetrics {
        #[arg(long)]
        log: PathBuf,
        /// Configuration the log was produced with (for the success region,
        /// ergodic domain and deadband).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<(Config, PathBuf)> {
    let (mut cfg, base) = match &common.config {
        Some(p) => (Config::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (Config::default(), PathBuf::from(".")),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(c) = common.criterion {
        cfg.criterion.kind = Some(match c {
            CriterionArg::Mig => Criterion::Mig,
            CriterionArg::Ocip => Criterion::Ocip,
        });
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn list_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    Ok(v)
}

fn histogram_of(dir: &Path, bins: usize, omega_max: f64) -> Result<stats::Histogram2d> {
    let mut all = Vec::new();
    for p in list_logs(dir)? {
        all.push(csvio::read_trial_log(&p)?.states());
    }
    Ok(stats::histogram2d(all.iter().map(|v| v.as_slice()), (bins, bins), omega_max)?)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunTrial { common, out, user } => {
            let (cfg, base) = load_config(&common)?;
            let assisted = common.assist != Some(OnOff::Off);
            let log = harness::run_single(&cfg, &base, user.as_deref(), assisted, cfg.seed)?;
            let setup = cfg.setup()?;
            let m = log.metrics(&setup.region, &setup.ergodic, setup.criterion.deadband)?;
            let id = user.unwrap_or_else(|| {
                cfg.cohort(&base).ok().and_then(|c| c.first().map(|m| m.id.clone())).unwrap_or_default()
            });
            let row = MetricsRow { user: id, group: String::new(), set: 1, trial: 1, metrics: Some(m) };
            csvio::write_trial_log(&out.join("trial.csv"), &log)?;
            write_atomic(&out.join("metrics.csv"), &csvio::metrics_table_bytes(&[row]))?;
            eprintln!("done success={} balance_time={}", m.success, fmt_float(m.balance_time));
        }
        Command::RunProtocol { common, out } => {
            let (cfg, base) = load_config(&common)?;
            let force_off = common.assist == Some(OnOff::Off);
            let logs = cfg.write_logs.then(|| harness::log_dir(&out));
            let done = AtomicUsize::new(0);
            let progress = |r: &MetricsRow| {
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                let status = if r.metrics.is_some() { "ok" } else { "failed" };
                eprintln!("progress done={n} user={} set={} trial={} status={status}", r.user, r.set, r.trial);
            };
            let res = harness::run_protocol(&cfg, &base, logs.as_deref(), force_off, &progress)?;
            write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
            write_atomic(&out.join("metrics.csv"), &csvio::metrics_table_bytes(&res.rows))?;
            write_atomic(&out.join("blocks.csv"), &csvio::block_table_bytes(&res.blocks))?;
            for (u, s, t, e) in &res.failures {
                eprintln!("failed user={u} set={s} trial={t} error={e:?}");
            }
            if !res.failures.is_empty() {
                return Err(Error::Runtime(format!("{} trials failed", res.failures.len())));
            }
        }
        Command::Analyze { test, metrics, logs, baseline, bins, omega_max, out } => {
            let bytes = if test == AnalysisTest::Histogram {
                let dir = logs.ok_or_else(|| Error::Config("histogram needs --logs".into()))?;
                let mut h = histogram_of(&dir, bins, omega_max)?;
                if let Some(b) = baseline {
                    h = h.subtract(&histogram_of(&b, bins, omega_max)?)?;
                }
                analyze::histogram_csv(&h)
            } else {
                let path = metrics.ok_or_else(|| Error::Config("--metrics is required".into()))?;
                let rows = csvio::read_metrics_table(&path)?;
                match test {
                    AnalysisTest::PraVsSkill => analyze::correlation_csv(&analyze::pra_vs_skill(&rows)),
                    AnalysisTest::PraVsPerformance => analyze::correlation_csv(&analyze::pra_vs_performance(&rows)),
                    _ => analyze::assist_csv(&analyze::assist_effect(&rows)),
                }
            };
            emit(out.as_deref(), &bytes)?;
        }
        Command::Serve { common, port, out } => {
            let (cfg, _) = load_config(&common)?;
            let s = &cfg.serve;
            let live = LiveConfig {
                tick_interval: Duration::from_secs_f64(1.0 / s.tick_hz),
                lockstep: s.lockstep,
                stale_ticks: s.stale_ticks,
                disconnect_timeout: Duration::from_secs_f64(s.disconnect_timeout),
                out_dir: out,
                default_assist: common.assist != Some(OnOff::Off),
                ..LiveConfig::new(cfg.setup()?, cfg.hash()?)
            };
            live::serve(port, live)?;
        }
        Command::ReplayMetrics { log, config, out } => {
            let cfg = match &config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            let setup = cfg.setup()?;
            let l = csvio::read_trial_log(&log)?;
            let m = l.metrics(&setup.region, &setup.ergodic, setup.criterion.deadband)?;
            let row = MetricsRow { user: String::new(), group: String::new(), set: 0, trial: 0, metrics: Some(m) };
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            let _ = w.write_record(&csvio::METRICS_HEADER[4..]);
            let _ = w.write_record(&csvio::metrics_record(&row)[4..]);
            emit(out.as_deref(), &w.into_inner().unwrap_or_default())?;
        }
    }
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
