//! Analyses over a metrics table.

use std::collections::BTreeMap;

use sharedctl_core::metrics::TrialMetrics;

use crate::csvio::{fmt_float, MetricsRow};
use crate::stats::{pearson, t_test, CorrelationResult, TTestResult};

type Measure = (&'static str, fn(&TrialMetrics) -> f64);

/// Performance measures, in output order.
pub const MEASURES: [Measure; 5] = [
    ("success_rate", |m| m.success as u8 as f64),
    ("balance_time", |m| m.balance_time),
    ("time_to_success", |m| m.time_to_success),
    ("rms_error", |m| m.rms_error),
    ("ergodicity", |m| m.ergodicity),
];

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn by_user(rows: &[MetricsRow]) -> BTreeMap<&str, Vec<&MetricsRow>> {
    let mut m: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.user.as_str()).or_default().push(r);
    }
    m
}

/// Per user: mean performance over the first set with no assisted trial,
/// against mean PRA over all assisted trials. Users lacking either are
/// skipped. A measure whose correlation is undefined gets `None`.
pub fn pra_vs_skill(rows: &[MetricsRow]) -> Vec<(&'static str, Option<CorrelationResult>)> {
    let mut skill: Vec<[f64; 5]> = Vec::new();
    let mut pras = Vec::new();
    for (_, rs) in by_user(rows) {
        let Some(pra) = mean(rs.iter().filter_map(|r| r.metrics.and_then(|m| m.pra))) else {
            continue;
        };
        let mut sets: Vec<usize> = rs.iter().map(|r| r.set).collect();
        sets.sort_unstable();
        sets.dedup();
        let first = sets.into_iter().find(|&s| rs.iter().filter(|r| r.set == s).all(|r| !r.assisted()));
        let Some(first) = first else { continue };
        let ms: Vec<TrialMetrics> = rs.iter().filter(|r| r.set == first).filter_map(|r| r.metrics).collect();
        if ms.is_empty() {
            continue;
        }
        let mut row = [0.0; 5];
        for (k, (_, f)) in MEASURES.iter().enumerate() {
            row[k] = mean(ms.iter().map(f)).unwrap_or(0.0);
        }
        skill.push(row);
        pras.push(pra);
    }
    MEASURES
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let xs: Vec<f64> = skill.iter().map(|r| r[k]).collect();
            (*name, pearson(&xs, &pras).ok())
        })
        .collect()
}

/// Per assisted trial: PRA against the same trial's performance.
pub fn pra_vs_performance(rows: &[MetricsRow]) -> Vec<(&'static str, Option<CorrelationResult>)> {
    let ms: Vec<TrialMetrics> = rows.iter().filter_map(|r| r.metrics).filter(|m| m.pra.is_some()).collect();
    let pras: Vec<f64> = ms.iter().filter_map(|m| m.pra).collect();
    MEASURES
        .iter()
        .map(|(name, f)| {
            let ys: Vec<f64> = ms.iter().map(f).collect();
            (*name, pearson(&pras, &ys).ok())
        })
        .collect()
}

/// Paired per-user comparison of assisted against unassisted trial means.
pub struct AssistEffect {
    pub measure: &'static str,
    pub mean_assisted: f64,
    pub mean_unassisted: f64,
    pub test: Option<TTestResult>,
}

pub fn assist_effect(rows: &[MetricsRow]) -> Vec<AssistEffect> {
    let mut pairs: Vec<([f64; 5], [f64; 5])> = Vec::new();
    for (_, rs) in by_user(rows) {
        let on: Vec<TrialMetrics> = rs.iter().filter(|r| r.assisted()).filter_map(|r| r.metrics).collect();
        let off: Vec<TrialMetrics> = rs.iter().filter(|r| !r.assisted()).filter_map(|r| r.metrics).collect();
        if on.is_empty() || off.is_empty() {
            continue;
        }
        let mut a = [0.0; 5];
        let mut b = [0.0; 5];
        for (k, (_, f)) in MEASURES.iter().enumerate() {
            a[k] = mean(on.iter().map(f)).unwrap_or(0.0);
            b[k] = mean(off.iter().map(f)).unwrap_or(0.0);
        }
        pairs.push((a, b));
    }
    MEASURES
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let a: Vec<f64> = pairs.iter().map(|p| p.0[k]).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1[k]).collect();
            AssistEffect {
                measure: name,
                mean_assisted: mean(a.iter().copied()).unwrap_or(f64::NAN),
                mean_unassisted: mean(b.iter().copied()).unwrap_or(f64::NAN),
                test: t_test(&a, &b, true).ok(),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn correlation_csv(results: &[(&'static str, Option<CorrelationResult>)]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let _ = w.write_record(["measure", "r", "p"]);
    for (name, c) in results {
        let _ = w.write_record([name.to_string(), cell(c.map(|c| c.r)), cell(c.map(|c| c.p))]);
    }
    w.into_inner().unwrap_or_default()
}

pub fn assist_csv(results: &[AssistEffect]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let _ = w.write_record(["measure", "mean_assisted", "mean_unassisted", "t", "df", "p"]);
    for e in results {
        let _ = w.write_record([
            e.measure.to_string(),
            cell(Some(e.mean_assisted)),
            cell(Some(e.mean_unassisted)),
            cell(e.test.map(|t| t.t)),
            cell(e.test.map(|t| t.df)),
            cell(e.test.map(|t| t.p)),
        ]);
    }
    w.into_inner().unwrap_or_default()
}

/// Grid file: one row per cell, `theta_bin,theta_dot_bin,density`.
pub fn histogram_csv(h: &crate::stats::Histogram2d) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let _ = w.write_record(["theta_bin", "theta_dot_bin", "density"]);
    for i in 0..h.theta_bins {
        for j in 0..h.omega_bins {
            let _ = w.write_record([i.to_string(), j.to_string(), fmt_float(h.get(i, j))]);
        }
    }
    w.into_inner().unwrap_or_default()
}
