//! Study protocols: the set/session schedule per cohort member, parallel
//! execution of the trials and block summaries.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sharedctl_core::filter::CriterionKind;
use sharedctl_core::trial::{run_trial, TrialLog, TrialSetup};

use crate::config::{CohortMember, Config, Study};
use crate::csvio::{write_trial_log, BlockRow, MetricsRow};
use crate::error::{Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SHAREDCTL_THREADS";

/// One set (or session) of trials for one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetPlan {
    pub assisted: bool,
    pub criterion: CriterionKind,
}

/// Sets for a cohort member under the configured study.
///
/// MIG study: three sets, assistance only in the second set of the trained
/// group. OCIP study: two sessions, assistance in the first session for
/// `assist_first` and in the second for everyone else.
pub fn schedule(cfg: &Config, member: &CohortMember) -> Vec<SetPlan> {
    let kind = cfg.criterion_kind();
    let set = |assisted| SetPlan { assisted, criterion: kind };
    match cfg.study {
        Study::Mig => {
            let trained = member.group == "trained";
            vec![set(false), set(trained), set(false)]
        }
        Study::Ocip => {
            let first = member.group == "assist_first";
            vec![set(first), set(!first)]
        }
        Study::Custom => cfg
            .sets
            .iter()
            .map(|s| SetPlan { assisted: s.assisted, criterion: s.criterion.map_or(kind, Into::into) })
            .collect(),
    }
}

/// Deterministic per-trial seed.
pub fn trial_seed(user_seed: u64, set: usize, trial: usize) -> u64 {
    let mut z = user_seed ^ ((set as u64) << 40) ^ (trial as u64);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worker count from the environment, at least one.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `f` over `items` in a pool of [`thread_count`] workers, keeping order.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Runtime(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[derive(Debug, Clone)]
struct Job {
    user: usize,
    set: usize,
    trial: usize,
    plan: SetPlan,
}

/// Result of a protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolOutput {
    pub rows: Vec<MetricsRow>,
    pub blocks: Vec<BlockRow>,
    /// Trials that failed, with the reason.
    pub failures: Vec<(String, usize, usize, String)>,
}

/// File name of a trial log inside the log directory.
pub fn log_file_name(user: &str, set: usize, trial: usize) -> String {
    format!("{user}_s{set}_t{trial:02}.csv")
}

/// Run every scheduled trial for every cohort member.
///
/// `log_dir`, when given, receives one CSV per trial. `force_unassisted`
/// turns assistance off everywhere. `progress` is called once per finished
/// trial (from worker threads).
pub fn run_protocol(
    cfg: &Config,
    base: &Path,
    log_dir: Option<&Path>,
    force_unassisted: bool,
    progress: &(dyn Fn(&MetricsRow) + Sync),
) -> Result<ProtocolOutput> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let hash = cfg.hash()?;
    let cohort = cfg.cohort(base)?;
    let mut jobs = Vec::new();
    for (u, member) in cohort.iter().enumerate() {
        for (s, plan) in schedule(cfg, member).into_iter().enumerate() {
            let plan = SetPlan { assisted: plan.assisted && !force_unassisted, ..plan };
            for t in 0..cfg.trials_per_set {
                jobs.push(Job { user: u, set: s + 1, trial: t + 1, plan });
            }
        }
    }
    let results = par_map(&jobs, |job| {
        let member = &cohort[job.user];
        let seed = trial_seed(member.model.seed, job.set, job.trial);
        let res = run_one(&setup, member, job, seed, &hash, log_dir);
        let row = MetricsRow {
            user: member.id.clone(),
            group: member.group.clone(),
            set: job.set,
            trial: job.trial,
            metrics: res.as_ref().ok().copied(),
        };
        progress(&row);
        (row, res.err().map(|e| e.to_string()))
    })?;
    let mut rows = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (row, err) in results {
        if let Some(e) = err {
            failures.push((row.user.clone(), row.set, row.trial, e));
        }
        rows.push(row);
    }
    let blocks = block_summaries(&rows, cfg.block_size);
    Ok(ProtocolOutput { rows, blocks, failures })
}

fn run_one(
    setup: &TrialSetup,
    member: &CohortMember,
    job: &Job,
    seed: u64,
    hash: &str,
    log_dir: Option<&Path>,
) -> Result<sharedctl_core::metrics::TrialMetrics> {
    let setup = setup.with_criterion(job.plan.criterion);
    let (log, metrics) = run_trial(&setup, &member.model, job.plan.assisted, seed, hash)?;
    if let Some(dir) = log_dir {
        write_trial_log(&dir.join(log_file_name(&member.id, job.set, job.trial)), &log)?;
    }
    Ok(metrics)
}

/// Run one trial for a cohort member and return its log.
pub fn run_single(cfg: &Config, base: &Path, user: Option<&str>, assisted: bool, seed: u64) -> Result<TrialLog> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let cohort = cfg.cohort(base)?;
    let member = match user {
        Some(id) => cohort.iter().find(|m| m.id == id).ok_or_else(|| Error::Config(format!("no user {id}")))?,
        None => cohort.first().ok_or_else(|| Error::Config("empty cohort".into()))?,
    };
    let (log, _) = run_trial(&setup, &member.model, assisted, seed, &cfg.hash()?)?;
    Ok(log)
}

/// Means over consecutive blocks of `block` trials within each user and set.
/// Failed trials are skipped; PRA is averaged over assisted trials only.
pub fn block_summaries(rows: &[MetricsRow], block: usize) -> Vec<BlockRow> {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.user, a.set, a.trial).cmp(&(&b.user, b.set, b.trial)));
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let (user, set) = (&sorted[i].user, sorted[i].set);
        let mut j = i;
        while j < sorted.len() && &sorted[j].user == user && sorted[j].set == set {
            j += 1;
        }
        for (b, chunk) in sorted[i..j].chunks(block.max(1)).enumerate() {
            let ms: Vec<_> = chunk.iter().filter_map(|r| r.metrics).collect();
            if ms.is_empty() {
                continue;
            }
            let n = ms.len() as f64;
            let avg = |f: &dyn Fn(&sharedctl_core::metrics::TrialMetrics) -> f64| ms.iter().map(f).sum::<f64>() / n;
            let pras: Vec<f64> = ms.iter().filter_map(|m| m.pra).collect();
            out.push(BlockRow {
                user: user.clone(),
                group: sorted[i].group.clone(),
                set,
                block: b + 1,
                success_rate: avg(&|m| m.success as u8 as f64),
                balance_time: avg(&|m| m.balance_time),
                time_to_success: avg(&|m| m.time_to_success),
                rms_error: avg(&|m| m.rms_error),
                ergodicity: avg(&|m| m.ergodicity),
                pra: (!pras.is_empty()).then(|| pras.iter().sum::<f64>() / pras.len() as f64),
            });
        }
        i = j;
    }
    out
}

/// Directory for per-trial logs under an output directory.
pub fn log_dir(out: &Path) -> PathBuf {
    out.join("logs")
}
