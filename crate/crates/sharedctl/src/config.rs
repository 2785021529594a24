//! Run configuration: a TOML file with one table per engine component.
//!
//! Unknown keys are rejected. The hash embedded in every output is the
//! SHA-256 of the re-serialized effective configuration, so overrides from
//! the command line are part of it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sharedctl_core::control::{CostParams, HandoffParams, Horizon, SacParams};
use sharedctl_core::dynamics::{PendulumParams, State};
use sharedctl_core::filter::{CriterionConfig, CriterionKind, RejectionMode};
use sharedctl_core::metrics::{ErgodicConfig, SuccessRegion};
use sharedctl_core::trial::TrialSetup;
use sharedctl_core::users::{UserKind, UserModel};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Mig,
    Ocip,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Mig,
    Ocip,
}

impl From<Criterion> for CriterionKind {
    fn from(c: Criterion) -> Self {
        match c {
            Criterion::Mig => CriterionKind::Mig,
            Criterion::Ocip => CriterionKind::Ocip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rejection {
    Zero,
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumSection {
    pub g: f64,
    pub length: f64,
    pub mass: f64,
    pub damping: f64,
    pub u_sat: f64,
    pub cart_min: f64,
    pub cart_max: f64,
}

impl Default for PendulumSection {
    fn default() -> Self {
        let p = PendulumParams::default();
        PendulumSection {
            g: p.g,
            length: p.l,
            mass: p.m,
            damping: p.b,
            u_sat: p.u_sat,
            cart_min: p.cart_bounds.0,
            cart_max: p.cart_bounds.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub q: [f64; 4],
    pub p1: [f64; 4],
    pub r: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostParams::default();
        CostSection { q: c.q, p1: c.p1, r: c.r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSection {
    pub window: f64,
    pub t_s: f64,
    pub plan_substeps: usize,
    /// Integration substeps per sampling period.
    pub sim_substeps: usize,
}

impl Default for HorizonSection {
    fn default() -> Self {
        let h = Horizon::default();
        HorizonSection {
            window: h.window,
            t_s: h.t_s,
            plan_substeps: h.plan_substeps,
            sim_substeps: TrialSetup::default().substeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacSection {
    pub alpha_scale: f64,
    pub shift_previous: bool,
}

impl Default for SacSection {
    fn default() -> Self {
        let s = SacParams::default();
        SacSection { alpha_scale: s.alpha_scale, shift_previous: s.shift_previous }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandoffSection {
    pub theta_switch: f64,
    pub omega_switch: f64,
    pub exit_factor: f64,
}

impl Default for HandoffSection {
    fn default() -> Self {
        let h = HandoffParams::default();
        HandoffSection { theta_switch: h.theta_switch, omega_switch: h.omega_switch, exit_factor: h.exit_factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriterionSection {
    /// Unset means the study default (MIG for the MIG study and custom runs,
    /// OCIP for the OCIP study).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Criterion>,
    pub gamma: f64,
    pub rejection: Rejection,
    pub deadband: f64,
}

impl Default for CriterionSection {
    fn default() -> Self {
        let c = CriterionConfig::default();
        CriterionSection { kind: None, gamma: c.gamma, rejection: Rejection::Zero, deadband: c.deadband }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessSection {
    pub theta_tol: f64,
    pub omega_tol: f64,
}

impl Default for SuccessSection {
    fn default() -> Self {
        let r = SuccessRegion::default();
        SuccessSection { theta_tol: r.theta_tol, omega_tol: r.omega_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicSection {
    pub omega_max: f64,
    pub k_max: usize,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        let e = ErgodicConfig::default();
        ErgodicSection { omega_max: e.omega_max, k_max: e.k_max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserKindName {
    Noise,
    Blend,
    Replay,
}

/// One cohort member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub id: String,
    pub kind: UserKindName,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Input magnitude cap; defaults to the input saturation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Trial log whose inputs a replay user repeats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
}

fn default_sigma() -> f64 {
    8.0
}

/// Generated cohort used when no explicit users are listed: blend users with
/// skill evenly spaced over `[alpha_min, alpha_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    pub size: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub sigma: f64,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection { size: 4, alpha_min: 0.0, alpha_max: 1.0, sigma: default_sigma() }
    }
}

/// A set in a custom study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSection {
    pub assisted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub tick_hz: f64,
    /// Advance one tick per received input instead of on the clock.
    pub lockstep: bool,
    /// Seconds a disconnected trial stays paused before it is aborted.
    pub disconnect_timeout: f64,
    /// Ticks after which an operator input counts as stale.
    pub stale_ticks: u64,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { tick_hz: 60.0, lockstep: false, disconnect_timeout: 10.0, stale_ticks: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub study: Study,
    pub trials_per_set: usize,
    pub duration: f64,
    pub block_size: usize,
    pub write_logs: bool,
    pub pendulum: PendulumSection,
    pub cost: CostSection,
    pub horizon: HorizonSection,
    pub sac: SacSection,
    pub handoff: HandoffSection,
    pub criterion: CriterionSection,
    pub success: SuccessSection,
    pub ergodic: ErgodicSection,
    pub cohort: CohortSection,
    pub serve: ServeSection,
    pub users: Vec<UserSection>,
    pub sets: Vec<SetSection>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            study: Study::Ocip,
            trials_per_set: 30,
            duration: 30.0,
            block_size: 5,
            write_logs: true,
            pendulum: PendulumSection::default(),
            cost: CostSection::default(),
            horizon: HorizonSection::default(),
            sac: SacSection::default(),
            handoff: HandoffSection::default(),
            criterion: CriterionSection::default(),
            success: SuccessSection::default(),
            ergodic: ErgodicSection::default(),
            cohort: CohortSection::default(),
            serve: ServeSection::default(),
            users: Vec::new(),
            sets: Vec::new(),
        }
    }
}

/// A cohort member resolved from the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortMember {
    pub id: String,
    pub group: String,
    pub model: UserModel,
    /// Skill, for blend users.
    pub alpha: Option<f64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Criterion in effect when no set overrides it.
    pub fn criterion_kind(&self) -> CriterionKind {
        match (self.criterion.kind, self.study) {
            (Some(c), _) => c.into(),
            (None, Study::Ocip) => CriterionKind::Ocip,
            (None, _) => CriterionKind::Mig,
        }
    }

    pub fn setup(&self) -> Result<TrialSetup> {
        let p = &self.pendulum;
        let c = &self.criterion;
        let setup = TrialSetup {
            params: PendulumParams {
                g: p.g,
                l: p.length,
                m: p.mass,
                b: p.damping,
                u_sat: p.u_sat,
                cart_bounds: (p.cart_min, p.cart_max),
            },
            cost: CostParams { q: self.cost.q, p1: self.cost.p1, r: self.cost.r, goal: State::UPRIGHT },
            horizon: Horizon {
                window: self.horizon.window,
                t_s: self.horizon.t_s,
                plan_substeps: self.horizon.plan_substeps,
            },
            sac: SacParams { alpha_scale: self.sac.alpha_scale, shift_previous: self.sac.shift_previous },
            handoff: HandoffParams {
                theta_switch: self.handoff.theta_switch,
                omega_switch: self.handoff.omega_switch,
                exit_factor: self.handoff.exit_factor,
            },
            criterion: CriterionConfig {
                kind: self.criterion_kind(),
                gamma: c.gamma,
                rejection_mode: match c.rejection {
                    Rejection::Zero => RejectionMode::RejectToZero,
                    Rejection::Nominal => RejectionMode::ReplaceWithNominal,
                },
                deadband: c.deadband,
            },
            region: SuccessRegion { theta_tol: self.success.theta_tol, omega_tol: self.success.omega_tol },
            ergodic: ErgodicConfig { omega_max: self.ergodic.omega_max, k_max: self.ergodic.k_max },
            duration: self.duration,
            substeps: self.horizon.sim_substeps,
        };
        setup.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(setup)
    }

    /// Check everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.setup()?;
        if self.trials_per_set == 0 {
            return Err(Error::Config("trials_per_set must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        if self.serve.tick_hz <= 0.0 || self.serve.disconnect_timeout < 0.0 {
            return Err(Error::Config("serve.tick_hz and serve.disconnect_timeout must be positive".into()));
        }
        if self.study == Study::Custom && self.sets.is_empty() {
            return Err(Error::Config("a custom study needs at least one [[sets]] entry".into()));
        }
        if self.study != Study::Custom && !self.sets.is_empty() {
            return Err(Error::Config("[[sets]] is only allowed with study = \"custom\"".into()));
        }
        if self.users.is_empty() && self.cohort.size == 0 {
            return Err(Error::Config("empty cohort".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for u in &self.users {
            if !ids.insert(u.id.as_str()) {
                return Err(Error::Config(format!("duplicate user id {}", u.id)));
            }
            if u.kind == UserKindName::Replay && u.log.is_none() {
                return Err(Error::Config(format!("replay user {} needs a log", u.id)));
            }
        }
        Ok(())
    }

    /// Resolve the cohort. Replay logs are read relative to `base`.
    pub fn cohort(&self, base: &Path) -> Result<Vec<CohortMember>> {
        let cap_default = self.pendulum.u_sat;
        let mut out = Vec::new();
        if self.users.is_empty() {
            let c = &self.cohort;
            for i in 0..c.size {
                let alpha = c.alpha_min + (c.alpha_max - c.alpha_min) * (i as f64 + 0.5) / c.size as f64;
                let mut model = UserModel::blend(alpha, c.sigma, self.seed.wrapping_add(i as u64));
                model.cap = cap_default;
                out.push(CohortMember {
                    id: format!("u{:02}", i + 1),
                    group: self.default_group(i).to_string(),
                    model,
                    alpha: Some(alpha),
                });
            }
        } else {
            for (i, u) in self.users.iter().enumerate() {
                let seed = u.seed.unwrap_or(self.seed.wrapping_add(i as u64));
                let kind = match u.kind {
                    UserKindName::Noise => UserKind::Noise,
                    UserKindName::Blend => UserKind::SkilledBlend { alpha: u.alpha },
                    UserKindName::Replay => {
                        let rel = u.log.as_deref().unwrap_or_default();
                        let path = base.join(rel);
                        let log = crate::csvio::read_trial_log(&path)
                            .map_err(|e| Error::Config(format!("replay log {}: {e}", path.display())))?;
                        UserKind::Replay(log.inputs())
                    }
                };
                let model = UserModel { kind, sigma: u.sigma, seed, cap: u.cap.unwrap_or(cap_default) };
                model.validate().map_err(|e| Error::Config(format!("user {}: {e}", u.id)))?;
                out.push(CohortMember {
                    id: u.id.clone(),
                    group: u.group.clone().unwrap_or_else(|| self.default_group(i).to_string()),
                    model,
                    alpha: (u.kind == UserKindName::Blend).then_some(u.alpha),
                });
            }
        }
        Ok(out)
    }

    fn default_group(&self, i: usize) -> &'static str {
        match (self.study, i % 2) {
            (Study::Mig, 0) => "trained",
            (Study::Mig, _) => "control",
            (Study::Ocip, 0) => "assist_first",
            (Study::Ocip, _) => "assist_second",
            (Study::Custom, _) => "all",
        }
    }
}
