//! One 30 s trial: the per-tick loop shared by the batch harness and the live
//! service, and the log it produces.

use alloc::string::String;
use alloc::vec::Vec;

use crate::control::{ControllerMode, CostParams, HandoffParams, Horizon, NominalPlan, Planner, SacParams};
use crate::dynamics::{step_substeps, PendulumParams, State};
use crate::error::{Error, Result};
use crate::filter::{CriterionConfig, CriterionKind, HybridFilter};
use crate::metrics::{trial_metrics, ErgodicConfig, SuccessRegion, TrialMetrics};
use crate::users::UserModel;

/// Everything needed to run a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub params: PendulumParams,
    pub cost: CostParams,
    pub horizon: Horizon,
    pub sac: SacParams,
    pub handoff: HandoffParams,
    pub criterion: CriterionConfig,
    pub region: SuccessRegion,
    pub ergodic: ErgodicConfig,
    /// Trial length, seconds.
    pub duration: f64,
    /// Integration substeps per sampling period.
    pub substeps: usize,
}

impl Default for TrialSetup {
    fn default() -> Self {
        TrialSetup {
            params: PendulumParams::default(),
            cost: CostParams::default(),
            horizon: Horizon::default(),
            sac: SacParams::default(),
            handoff: HandoffParams::default(),
            criterion: CriterionConfig::default(),
            region: SuccessRegion::default(),
            ergodic: ErgodicConfig::default(),
            duration: 30.0,
            substeps: 10,
        }
    }
}

impl TrialSetup {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cost.validate()?;
        self.horizon.validate()?;
        self.criterion.validate()?;
        self.region.validate()?;
        self.ergodic.validate()?;
        let ok = self.duration > 0.0
            && self.duration.is_finite()
            && self.substeps >= 1
            && self.sac.alpha_scale > 0.0
            && self.handoff.theta_switch > 0.0
            && self.handoff.omega_switch > 0.0
            && self.handoff.exit_factor >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(String::from("trial duration, substeps, sac or handoff")))
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon.t_s
    }

    pub fn n_ticks(&self) -> usize {
        libm::round(self.duration / self.horizon.t_s) as usize
    }

    pub fn with_criterion(&self, kind: CriterionKind) -> Self {
        let mut s = self.clone();
        s.criterion.kind = kind;
        s
    }
}

/// Round to 9 significant digits, the precision persisted in logs.
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    alloc::format!("{:.8e}", v).parse().unwrap_or(v)
}

/// One logged tick: the state at `t` and the input decision taken there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRow {
    pub t: f64,
    pub state: State,
    pub u_user: f64,
    pub u_applied: f64,
    pub accepted: bool,
    pub criterion_value: f64,
    pub controller_mode: ControllerMode,
}

impl TrialRow {
    /// Copy with every float rounded to log precision.
    pub fn quantized(&self) -> Self {
        let s = self.state;
        TrialRow {
            t: quantize(self.t),
            state: State::new(quantize(s.theta), quantize(s.theta_dot), quantize(s.x_c), quantize(s.x_c_dot)),
            u_user: quantize(self.u_user),
            u_applied: quantize(self.u_applied),
            criterion_value: quantize(self.criterion_value),
            ..*self
        }
    }
}

/// Provenance stored alongside the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub config_hash: String,
    pub seed: u64,
    pub assisted: bool,
    pub criterion: CriterionKind,
    /// Sampling period, seconds.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub meta: LogMeta,
    pub rows: Vec<TrialRow>,
}

impl TrialLog {
    pub fn states(&self) -> Vec<State> {
        self.rows.iter().map(|r| r.state).collect()
    }

    /// Recompute all measures from the rows.
    pub fn metrics(&self, region: &SuccessRegion, ergodic: &ErgodicConfig, deadband: f64) -> Result<TrialMetrics> {
        let states = self.states();
        let decisions: Vec<(f64, bool)> = self.rows.iter().map(|r| (r.u_user, r.accepted)).collect();
        let d = self.meta.assisted.then_some((decisions.as_slice(), deadband));
        trial_metrics(&states, self.meta.dt, region, ergodic, d)
    }

    /// The logged user inputs, for replay.
    pub fn inputs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u_user).collect()
    }
}

/// Stepwise trial engine. Each [`TrialEngine::tick`] plans from the current
/// state, asks for the operator input, filters it (if assisted), integrates
/// one sampling period and records a row.
#[derive(Debug, Clone)]
pub struct TrialEngine {
    setup: TrialSetup,
    filter: HybridFilter,
    assisted: bool,
    x: State,
    rows: Vec<TrialRow>,
    n_ticks: usize,
}

impl TrialEngine {
    pub fn new(setup: &TrialSetup, assisted: bool) -> Result<Self> {
        setup.validate()?;
        let mut planner = Planner::new(setup.params, setup.cost, setup.horizon)?;
        planner.sac = setup.sac;
        planner.handoff = setup.handoff;
        let n_ticks = setup.n_ticks();
        Ok(TrialEngine {
            setup: setup.clone(),
            filter: HybridFilter::new(setup.criterion, planner),
            assisted,
            x: State::HANGING,
            rows: Vec::with_capacity(n_ticks),
            n_ticks,
        })
    }

    pub fn state(&self) -> State {
        self.x
    }

    pub fn tick_index(&self) -> usize {
        self.rows.len()
    }

    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    pub fn time(&self) -> f64 {
        self.rows.len() as f64 * self.setup.dt()
    }

    pub fn remaining(&self) -> f64 {
        (self.n_ticks - self.rows.len()) as f64 * self.setup.dt()
    }

    pub fn is_finished(&self) -> bool {
        self.rows.len() >= self.n_ticks
    }

    pub fn assisted(&self) -> bool {
        self.assisted
    }

    pub fn rows(&self) -> &[TrialRow] {
        &self.rows
    }

    /// Advance one tick. `input` receives the state, the nominal action and
    /// the time, and returns the operator's raw input.
    pub fn tick<F>(&mut self, input: F) -> Result<TrialRow>
    where
        F: FnOnce(&State, f64, f64) -> Result<f64>,
    {
        if self.is_finished() {
            return Err(Error::InvalidParam(String::from("trial already finished")));
        }
        let t = self.time();
        let plan: NominalPlan = self.filter.planner.nominal_action(&self.x);
        // inputs are used at log precision so a replayed log is exact
        let u_user = quantize(input(&self.x, plan.current(), t)?);
        let p = &self.setup.params;
        let row = if self.assisted {
            let d = self.filter.decide(t, u_user, &plan);
            TrialRow {
                t,
                state: self.x,
                u_user,
                u_applied: d.u_applied,
                accepted: d.accepted,
                criterion_value: d.criterion_value,
                controller_mode: d.controller_mode,
            }
        } else {
            let u = if u_user.is_finite() { p.saturate(u_user) } else { 0.0 };
            TrialRow {
                t,
                state: self.x,
                u_user,
                u_applied: u,
                accepted: true,
                criterion_value: 0.0,
                controller_mode: plan.mode,
            }
        }
        .quantized();
        self.x = step_substeps(&self.x, row.u_applied, self.setup.dt(), self.setup.substeps, p);
        self.rows.push(row);
        Ok(row)
    }

    pub fn setup(&self) -> &TrialSetup {
        &self.setup
    }

    fn meta(&self, config_hash: String, seed: u64) -> LogMeta {
        LogMeta {
            config_hash,
            seed,
            assisted: self.assisted,
            criterion: self.setup.criterion.kind,
            dt: self.setup.dt(),
        }
    }

    /// Log of the ticks so far, for trials that end early.
    pub fn partial_log(&self, config_hash: String, seed: u64) -> TrialLog {
        TrialLog { meta: self.meta(config_hash, seed), rows: self.rows.clone() }
    }

    /// Close the trial and compute its measures.
    pub fn finish(self, config_hash: String, seed: u64) -> Result<(TrialLog, TrialMetrics)> {
        let log = TrialLog { meta: self.meta(config_hash, seed), rows: self.rows };
        let m = log.metrics(&self.setup.region, &self.setup.ergodic, self.setup.criterion.deadband)?;
        Ok((log, m))
    }
}

/// Run a full trial for a synthetic user reseeded with `seed`.
pub fn run_trial(
    setup: &TrialSetup,
    user: &UserModel,
    assisted: bool,
    seed: u64,
    config_hash: &str,
) -> Result<(TrialLog, TrialMetrics)> {
    user.validate()?;
    let model = user.with_seed(seed);
    let mut gen = model.start();
    let mut engine = TrialEngine::new(setup, assisted)?;
    while !engine.is_finished() {
        engine.tick(|x, u_nom, t| gen.user_input(x, u_nom, t))?;
    }
    engine.finish(String::from(config_hash), seed)
}
