use std::f64::consts::PI;

use sharedctl_core::control::ControllerMode;
use sharedctl_core::dynamics::{step_substeps, State};
use sharedctl_core::filter::CriterionKind;
use sharedctl_core::metrics::is_success;
use sharedctl_core::trial::*;
use sharedctl_core::users::UserModel;

fn short(seconds: f64) -> TrialSetup {
    TrialSetup { duration: seconds, ..TrialSetup::default() }
}

#[test]
fn skilled_user_succeeds_unassisted() {
    let setup = TrialSetup::default();
    let (log, m) = run_trial(&setup, &UserModel::blend(1.0, 8.0, 1), false, 1, "h").unwrap();
    assert!(m.success);
    assert!(m.time_to_success < 30.0);
    assert_eq!(m.pra, None);
    assert_eq!(log.rows.len(), 1800);
    assert!(log.rows.iter().any(|r| r.controller_mode == ControllerMode::Lqr));
}

#[test]
fn rows_are_uniform_and_start_hanging() {
    let setup = short(2.0);
    let (log, _) = run_trial(&setup, &UserModel::noise(8.0, 2), true, 2, "abc").unwrap();
    assert_eq!(log.rows.len(), 120);
    assert_eq!(log.rows[0].state, State::new(quantize(PI), 0.0, 0.0, 0.0));
    for (k, r) in log.rows.iter().enumerate() {
        assert_eq!(r.t, quantize(k as f64 / 60.0));
    }
    assert_eq!(log.meta.config_hash, "abc");
    assert_eq!(log.meta.seed, 2);
    assert!(log.meta.assisted);
    assert_eq!(log.meta.criterion, CriterionKind::Mig);
}

#[test]
fn same_inputs_same_log() {
    let setup = short(3.0);
    let u = UserModel::blend(0.3, 8.0, 0);
    let a = run_trial(&setup, &u, true, 9, "").unwrap();
    let b = run_trial(&setup, &u, true, 9, "").unwrap();
    assert_eq!(a, b);
    let c = run_trial(&setup, &u, true, 10, "").unwrap();
    assert_ne!(a.0.rows, c.0.rows);
}

#[test]
fn unassisted_accepts_everything_with_saturation_only() {
    let setup = short(2.0);
    let (log, m) = run_trial(&setup, &UserModel::replay(vec![15.0; 120]), false, 0, "").unwrap();
    assert_eq!(m.pra, None);
    for r in &log.rows {
        assert!(r.accepted);
        assert_eq!(r.u_user, 15.0);
        assert_eq!(r.u_applied, 10.0);
    }
}

#[test]
fn logged_rows_reproduce_the_trajectory() {
    // each row's state follows from the previous row's applied input
    let setup = short(3.0);
    let (log, _) =
        run_trial(&setup.with_criterion(CriterionKind::Ocip), &UserModel::noise(8.0, 4), true, 4, "").unwrap();
    for w in log.rows.windows(2) {
        let next = step_substeps(&w[0].state, w[0].u_applied, 1.0 / 60.0, 10, &setup.params);
        let d = (next - w[1].state).to_array();
        assert!(d.iter().all(|v| v.abs() < 1e-7), "{d:?}");
    }
}

#[test]
fn metrics_recompute_from_log() {
    let setup = short(5.0);
    let (log, m) = run_trial(&setup, &UserModel::blend(0.5, 8.0, 3), true, 3, "").unwrap();
    assert_eq!(log.metrics(&setup.region, &setup.ergodic, setup.criterion.deadband).unwrap(), m);
}

#[test]
fn replay_of_logged_inputs_reproduces_the_log() {
    let setup = short(4.0);
    let (log, m) = run_trial(&setup, &UserModel::noise(8.0, 12), true, 12, "").unwrap();
    let (log2, m2) = run_trial(&setup, &UserModel::replay(log.inputs()), true, 12, "").unwrap();
    assert_eq!(log.rows, log2.rows);
    assert_eq!(m, m2);
}

#[test]
fn replay_exhaustion_is_an_error() {
    let setup = short(1.0);
    assert!(run_trial(&setup, &UserModel::replay(vec![0.0; 10]), false, 0, "").is_err());
}

#[test]
fn no_input_stays_hanging() {
    let setup = short(10.0);
    let (log, m) = run_trial(&setup, &UserModel::noise(0.0, 0), true, 0, "").unwrap();
    assert_eq!(m.pra, Some(0.0));
    assert!(log.rows.iter().all(|r| (r.state.theta - PI).abs() < 1e-8));
    assert!(!log.rows.iter().any(|r| is_success(&r.state, &setup.region)));
}

#[test]
fn engine_reports_progress() {
    let setup = short(1.0);
    let mut e = TrialEngine::new(&setup, true).unwrap();
    assert_eq!((e.n_ticks(), e.tick_index()), (60, 0));
    assert!((e.remaining() - 1.0).abs() < 1e-12);
    for _ in 0..60 {
        e.tick(|_, _, _| Ok(0.0)).unwrap();
    }
    assert!(e.is_finished());
    assert!(e.tick(|_, _, _| Ok(0.0)).is_err());
    let (log, _) = e.finish(String::new(), 0).unwrap();
    assert_eq!(log.rows.len(), 60);
}

#[test]
fn invalid_setup_rejected() {
    assert!(TrialEngine::new(&short(0.0), false).is_err());
    let mut s = TrialSetup::default();
    s.criterion.gamma = 2.0;
    assert!(TrialEngine::new(&s, false).is_err());
}

#[test]
fn assistance_helps_noise_users() {
    let setup = TrialSetup::default();
    let rate = |assisted: bool| {
        (0..100)
            .filter(|&k| run_trial(&setup, &UserModel::noise(8.0, 0), assisted, 500 + k, "").unwrap().1.success)
            .count()
    };
    let (off, on) = (rate(false), rate(true));
    assert!(on > off, "assisted {on}/100 vs unassisted {off}/100");
}
