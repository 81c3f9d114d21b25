use std::path::Path;
use std::process::{Command, Output};

use alelab::flow::CSV_HEADER;

const BIN: &str = env!("CARGO_BIN_EXE_alelab");

fn alelab(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).arg("--out").arg(out).env_remove("ALELAB_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

const SMALL_FLOW: &str = "\
# short run
grid.r_max = 60
grid.n = 1500
grid.stretch = 1.004
flow.t_end = 4
flow.snapshot_times = 1
fit.windows = 1:4
";

#[test]
fn missing_config_is_a_config_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = alelab(&["check", "--config", dir.path().join("nope.txt").to_str().unwrap()], &out);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn bad_key_and_bad_jobs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    std::fs::write(&cfg, "grid.n = 500\ngrid.colour = blue\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&alelab(&["check", "--config", cfg.to_str().unwrap()], &out)), 2);
    assert_eq!(code(&alelab(&["rates", "--jobs", "0"], &out)), 2);
    assert!(!out.exists());
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&alelab(&["frobnicate"], dir.path())), 64);
    assert_eq!(code(&alelab(&[], dir.path())), 64);
    assert_eq!(code(&alelab(&["rates", "--bogus"], dir.path())), 64);
    assert_eq!(code(&alelab(&["--help"], dir.path())), 0);
}

#[test]
fn rates_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = alelab(&["rates"], &a);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stdout));
    assert_eq!(code(&alelab(&["rates"], &b)), 0);
    let ra = read(a.join("rates/report.json"));
    assert_eq!(ra, read(b.join("rates/report.json")));

    let v: serde_json::Value = serde_json::from_str(&ra).unwrap();
    assert_eq!(v["schema"], 1);
    assert_eq!(v["all_pass"], true);
    let hash = v["config_hash"].as_str().unwrap();
    assert!(hash.starts_with("sha256:") && hash.len() == 7 + 64);
    let csv = read(a.join("rates/rates.csv"));
    assert_eq!(csv.lines().next().unwrap(), format!("# alelab {} config {hash}", env!("CARGO_PKG_VERSION")));
    let timing: serde_json::Value = serde_json::from_str(&read(a.join("rates/timing.json"))).unwrap();
    assert_eq!(timing["config_hash"], hash);
    assert!(String::from_utf8_lossy(&oa.stdout).contains("criterion  1 PASS"));
}

#[test]
fn environment_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (flag, env) = (dir.path().join("flag"), dir.path().join("env"));
    let o = Command::new(BIN).args(["check", "--out"]).arg(&flag).env("ALELAB_OUT", &env).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(env.join("check/report.json").exists());
    assert!(!flag.exists());
}

#[test]
fn flow_trajectory_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flow.txt");
    std::fs::write(&cfg, SMALL_FLOW).unwrap();
    let mut bodies = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = alelab(&["flow", "--config", cfg.to_str().unwrap()], &out);
        assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
        let csv = read(out.join("flow/trajectory.csv"));
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# alelab "));
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert!(lines.count() > 4);
        bodies.push((csv, read(out.join("flow/report.json"))));
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn psc_random_data_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&alelab(&["psc", "--jobs", "2"], &a)), 0);
    assert_eq!(code(&alelab(&["psc"], &b)), 0);
    assert_eq!(read(a.join("psc/report.json")), read(b.join("psc/report.json")));
    assert_eq!(read(a.join("psc/positivity.csv")), read(b.join("psc/positivity.csv")));
}
