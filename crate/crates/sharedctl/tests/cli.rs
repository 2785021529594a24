use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use sharedctl::csvio::{read_metrics_table, read_trial_log, write_trial_log};
use sharedctl_core::trial::{run_trial, TrialSetup};
use sharedctl_core::users::UserModel;

fn sharedctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sharedctl")).args(args).env("SHAREDCTL_THREADS", "2").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const MIG_CFG: &str = "study = \"mig\"\nduration = 1.0\ntrials_per_set = 3\nblock_size = 3\n[cohort]\nsize = 6\n";

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn run_protocol_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mig.toml", MIG_CFG);
    let out = dir.path().join("results");
    let o = sharedctl(&["run-protocol", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_metrics_table(&out.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 6 * 3 * 3);
    assert!(out.join("blocks.csv").exists() && out.join("config.toml").exists());
    assert_eq!(std::fs::read_dir(out.join("logs")).unwrap().count(), 54);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(stderr.lines().filter(|l| l.starts_with("progress ")).count(), 54);
    // no temp files left behind
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with('.')));

    // every log reproduces its row
    let log = out.join("logs/u03_s2_t02.csv");
    let rm = sharedctl(&["replay-metrics", "--log", log.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(rm.status.code(), Some(0));
    let text = String::from_utf8(rm.stdout).unwrap();
    let row = csv_lines(&out.join("metrics.csv")).into_iter().find(|l| l.starts_with("u03,trained,2,2,")).unwrap();
    let want: Vec<&str> = row.split(',').skip(4).collect();
    assert_eq!(text.lines().nth(1).unwrap(), want.join(","));
    assert_eq!(text.lines().next().unwrap(), "success,balance_time,time_to_success,rms_error,ergodicity,pra");

    for (test, header) in [
        ("pra-vs-skill", "measure,r,p"),
        ("pra-vs-performance", "measure,r,p"),
        ("assist", "measure,mean_assisted,mean_unassisted,t,df,p"),
    ] {
        let a = sharedctl(&["analyze", "--metrics", out.join("metrics.csv").to_str().unwrap(), "--test", test]);
        assert_eq!(a.status.code(), Some(0), "{test}");
        let text = String::from_utf8(a.stdout).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], header);
        assert_eq!(lines.len(), 6, "{text}");
    }
    // three trained users have both an unassisted first set and PRA
    let a = sharedctl(&["analyze", "--metrics", out.join("metrics.csv").to_str().unwrap(), "--test", "pra-vs-skill"]);
    let text = String::from_utf8(a.stdout).unwrap();
    let rms = text.lines().find(|l| l.starts_with("rms_error,")).unwrap();
    let cells: Vec<&str> = rms.split(',').collect();
    let (r, p): (f64, f64) = (cells[1].parse().unwrap(), cells[2].parse().unwrap());
    assert!((-1.0..=1.0).contains(&r) && (0.0..=1.0).contains(&p));
    // balance time is zero everywhere in one-second trials: undefined, left empty
    assert!(text.lines().any(|l| l == "balance_time,,"));

    let h = dir.path().join("grid.csv");
    let o = sharedctl(&[
        "analyze",
        "--test",
        "histogram",
        "--logs",
        out.join("logs").to_str().unwrap(),
        "--bins",
        "5",
        "--out",
        h.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let lines = csv_lines(&h);
    assert_eq!(lines[0], "theta_bin,theta_dot_bin,density");
    assert_eq!(lines.len(), 26);
    let total: f64 = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
}

#[test]
fn rerun_is_byte_identical_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "study = \"ocip\"\nduration = 0.5\ntrials_per_set = 2\n[cohort]\nsize = 2\n");
    let run = |out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let mut args = vec!["run-protocol", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(sharedctl(&args).status.code(), Some(0));
        out
    };
    let (a, b) = (run("a", &[]), run("b", &[]));
    for f in ["metrics.csv", "blocks.csv", "config.toml", "logs/u01_s1_t01.csv", "logs/u02_s2_t02.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = run("c", &["--seed", "99", "--criterion", "mig"]);
    let cfg_c = std::fs::read_to_string(c.join("config.toml")).unwrap();
    assert!(cfg_c.contains("seed = 99") && cfg_c.contains("kind = \"mig\""));
    let log = read_trial_log(&c.join("logs/u01_s1_t01.csv")).unwrap();
    assert_ne!(log.meta.config_hash, read_trial_log(&a.join("logs/u01_s1_t01.csv")).unwrap().meta.config_hash);

    let off = run("off", &["--assist", "off"]);
    assert!(read_metrics_table(&off.join("metrics.csv")).unwrap().iter().all(|r| !r.assisted()));
}

#[test]
fn run_trial_writes_log_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "duration = 2.0\n[[users]]\nid = \"sk\"\nkind = \"blend\"\nalpha = 1.0\n");
    let out = dir.path().join("t");
    for assist in ["on", "off"] {
        let o = sharedctl(&[
            "run-trial",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--assist",
            assist,
        ]);
        assert_eq!(o.status.code(), Some(0));
        let log = read_trial_log(&out.join("trial.csv")).unwrap();
        assert_eq!(log.rows.len(), 120);
        assert_eq!(log.meta.seed, 5);
        assert_eq!(log.meta.assisted, assist == "on");
        let rows = read_metrics_table(&out.join("metrics.csv")).unwrap();
        assert_eq!(rows[0].user, "sk");
        assert_eq!(rows[0].assisted(), assist == "on");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    // configuration problems: 1
    let bad = write(dir.path(), "bad.toml", "duratoin = 3.0\n");
    assert_eq!(sharedctl(&["run-protocol", "--config", &bad, "--out", out]).status.code(), Some(1));
    let invalid = write(dir.path(), "inv.toml", "[pendulum]\nlength = -1.0\n");
    assert_eq!(sharedctl(&["run-trial", "--config", &invalid, "--out", out]).status.code(), Some(1));
    let missing = dir.path().join("missing.toml");
    assert_eq!(sharedctl(&["run-trial", "--config", missing.to_str().unwrap(), "--out", out]).status.code(), Some(1));
    assert_eq!(sharedctl(&["run-protocol", "--criterion", "pid", "--out", out]).status.code(), Some(1));
    assert_eq!(sharedctl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sharedctl(&["--help"]).status.code(), Some(0));

    // runtime problems: 2
    let nolog = dir.path().join("nope.csv");
    assert_eq!(sharedctl(&["replay-metrics", "--log", nolog.to_str().unwrap()]).status.code(), Some(2));
    let setup = TrialSetup { duration: 0.25, ..TrialSetup::default() };
    let (log, _) = run_trial(&setup, &UserModel::noise(1.0, 0), false, 0, "").unwrap();
    write_trial_log(&dir.path().join("short.csv"), &log).unwrap();
    let rp = write(
        dir.path(),
        "rp.toml",
        "study = \"custom\"\nduration = 0.5\ntrials_per_set = 1\n[[sets]]\nassisted = false\n[[users]]\nid = \"r\"\nkind = \"replay\"\nlog = \"short.csv\"\n",
    );
    let o = sharedctl(&["run-protocol", "--config", &rp, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    // the table is still written, with the failed row flagged by empty cells
    let rows = read_metrics_table(&Path::new(out).join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].metrics.is_none());
}

#[test]
fn serve_accepts_a_session() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", "duration = 0.5\n");
    let mut child = Command::new(env!("CARGO_BIN_EXE_sharedctl"))
        .args(["serve", "--config", &cfg, "--port", &port.to_string(), "--out", dir.path().to_str().unwrap()])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let mut ws = loop {
        match tungstenite::connect(format!("ws://127.0.0.1:{port}")) {
            Ok((ws, _)) => break ws,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("{e}"),
        }
    };
    ws.send(tungstenite::Message::text(
        "{\"type\":\"session\",\"action\":\"start\",\"protocol\":\"ocip\",\"assist\":true}\n",
    ))
    .unwrap();
    let mut states = 0;
    let mut ended = false;
    while !ended {
        let msg = ws.read().unwrap();
        for line in msg.to_text().unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            match v["type"].as_str().unwrap() {
                "state" => states += 1,
                "trial_end" => ended = true,
                other => panic!("{other}"),
            }
        }
    }
    assert_eq!(states, 30);
    let _ = ws.close(None);
    child.kill().unwrap();
    let _ = child.wait();
    assert!(dir.path().join("session1_trial01.csv").exists());
}
