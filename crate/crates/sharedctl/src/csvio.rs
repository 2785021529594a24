//! CSV formats for trial logs, metrics tables and block summaries, and atomic
//! file output.

use std::io::Write;
use std::path::Path;

use sharedctl_core::control::ControllerMode;
use sharedctl_core::dynamics::State;
use sharedctl_core::filter::CriterionKind;
use sharedctl_core::metrics::TrialMetrics;
use sharedctl_core::trial::{quantize, LogMeta, TrialLog, TrialRow};

use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 10] = [
    "t",
    "theta",
    "theta_dot",
    "x_c",
    "x_c_dot",
    "u_user",
    "u_applied",
    "accepted",
    "criterion_value",
    "controller_mode",
];

pub const METRICS_HEADER: [&str; 10] = [
    "user",
    "group",
    "session_or_set",
    "trial",
    "success",
    "balance_time",
    "time_to_success",
    "rms_error",
    "ergodicity",
    "pra",
];

pub const BLOCK_HEADER: [&str; 10] = [
    "user",
    "group",
    "session_or_set",
    "block",
    "success_rate",
    "balance_time",
    "time_to_success",
    "rms_error",
    "ergodicity",
    "pra",
];

/// Float with at most 9 significant digits. Parsing the text gives back
/// exactly `quantize(v)`.
pub fn fmt_float(v: f64) -> String {
    let q = quantize(v);
    if q == 0.0 {
        "0".to_string()
    } else if !q.is_finite() || (1e-4..1e15).contains(&q.abs()) {
        format!("{q}")
    } else {
        format!("{q:e}")
    }
}

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let res = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn kind_str(k: CriterionKind) -> &'static str {
    match k {
        CriterionKind::Mig => "mig",
        CriterionKind::Ocip => "ocip",
    }
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn trial_log_bytes(log: &TrialLog) -> Vec<u8> {
    let m = &log.meta;
    let mut out = Vec::new();
    let _ = writeln!(out, "# config_hash={}", m.config_hash);
    let _ = writeln!(out, "# seed={}", m.seed);
    let _ = writeln!(out, "# assisted={}", m.assisted);
    let _ = writeln!(out, "# criterion={}", kind_str(m.criterion));
    let _ = writeln!(out, "# dt={:?}", m.dt);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let _ = w.write_record(LOG_HEADER);
    for r in &log.rows {
        let s = r.state;
        let _ = w.write_record([
            fmt_float(r.t),
            fmt_float(s.theta),
            fmt_float(s.theta_dot),
            fmt_float(s.x_c),
            fmt_float(s.x_c_dot),
            fmt_float(r.u_user),
            fmt_float(r.u_applied),
            (r.accepted as u8).to_string(),
            fmt_float(r.criterion_value),
            r.controller_mode.as_str().to_string(),
        ]);
    }
    w.into_inner().unwrap_or_default()
}

pub fn write_trial_log(path: &Path, log: &TrialLog) -> Result<()> {
    write_atomic(path, &trial_log_bytes(log))
}

pub fn parse_trial_log(path: &Path, text: &str) -> Result<TrialLog> {
    let mut meta =
        LogMeta { config_hash: String::new(), seed: 0, assisted: false, criterion: CriterionKind::Mig, dt: 1.0 / 60.0 };
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let Some((k, v)) = line.trim_start_matches('#').trim().split_once('=') else {
            continue;
        };
        let bad = |_| csv_err(path, format!("bad metadata line {line:?}"));
        match k {
            "config_hash" => meta.config_hash = v.to_string(),
            "seed" => meta.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "assisted" => meta.assisted = v.parse().map_err(|e: std::str::ParseBoolError| bad(e.to_string()))?,
            "criterion" => {
                meta.criterion = match v {
                    "mig" => CriterionKind::Mig,
                    "ocip" => CriterionKind::Ocip,
                    _ => return Err(bad(String::new())),
                }
            }
            "dt" => meta.dt = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            _ => {}
        }
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(LOG_HEADER) {
        return Err(csv_err(path, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|e| csv_err(path, format!("row {}: {e}", i + 1)))
        };
        let controller_mode = match &rec[9] {
            "MPC" => ControllerMode::Mpc,
            "LQR" => ControllerMode::Lqr,
            other => return Err(csv_err(path, format!("row {}: unknown mode {other:?}", i + 1))),
        };
        rows.push(TrialRow {
            t: f(0)?,
            state: State::new(f(1)?, f(2)?, f(3)?, f(4)?),
            u_user: f(5)?,
            u_applied: f(6)?,
            accepted: &rec[7] == "1",
            criterion_value: f(8)?,
            controller_mode,
        });
    }
    if rows.is_empty() {
        return Err(csv_err(path, "no rows"));
    }
    Ok(TrialLog { meta, rows })
}

pub fn read_trial_log(path: &Path) -> Result<TrialLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trial_log(path, &text)
}

/// One row of the metrics table. `metrics` is `None` for a trial that failed
/// to run; its metric cells are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub user: String,
    pub group: String,
    pub set: usize,
    pub trial: usize,
    pub metrics: Option<TrialMetrics>,
}

impl MetricsRow {
    pub fn assisted(&self) -> bool {
        self.metrics.is_some_and(|m| m.pra.is_some())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn metrics_record(r: &MetricsRow) -> Vec<String> {
    let m = r.metrics.as_ref();
    vec![
        r.user.clone(),
        r.group.clone(),
        r.set.to_string(),
        r.trial.to_string(),
        m.map(|m| (m.success as u8).to_string()).unwrap_or_default(),
        opt(m.map(|m| m.balance_time)),
        opt(m.map(|m| m.time_to_success)),
        opt(m.map(|m| m.rms_error)),
        opt(m.map(|m| m.ergodicity)),
        opt(m.and_then(|m| m.pra)),
    ]
}

pub fn metrics_table_bytes(rows: &[MetricsRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let _ = w.write_record(METRICS_HEADER);
    for r in rows {
        let _ = w.write_record(metrics_record(r));
    }
    w.into_inner().unwrap_or_default()
}

pub fn read_metrics_table(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(csv_err(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |e: String| csv_err(path, format!("row {}: {e}", i + 1));
        let int = |j: usize| rec[j].parse::<usize>().map_err(|e| bad(e.to_string()));
        let f = |j: usize| rec[j].parse::<f64>().map_err(|e| bad(e.to_string()));
        let metrics = if rec[4].is_empty() {
            None
        } else {
            Some(TrialMetrics {
                success: &rec[4] == "1",
                balance_time: f(5)?,
                time_to_success: f(6)?,
                rms_error: f(7)?,
                ergodicity: f(8)?,
                pra: if rec[9].is_empty() { None } else { Some(f(9)?) },
            })
        };
        out.push(MetricsRow {
            user: rec[0].to_string(),
            group: rec[1].to_string(),
            set: int(2)?,
            trial: int(3)?,
            metrics,
        });
    }
    Ok(out)
}

/// Mean of each measure over a block of consecutive trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub user: String,
    pub group: String,
    pub set: usize,
    pub block: usize,
    pub success_rate: f64,
    pub balance_time: f64,
    pub time_to_success: f64,
    pub rms_error: f64,
    pub ergodicity: f64,
    pub pra: Option<f64>,
}

pub fn block_table_bytes(rows: &[BlockRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let _ = w.write_record(BLOCK_HEADER);
    for r in rows {
        let _ = w.write_record([
            r.user.clone(),
            r.group.clone(),
            r.set.to_string(),
            r.block.to_string(),
            fmt_float(r.success_rate),
            fmt_float(r.balance_time),
            fmt_float(r.time_to_success),
            fmt_float(r.rms_error),
            fmt_float(r.ergodicity),
            opt(r.pra),
        ]);
    }
    w.into_inner().unwrap_or_default()
}
