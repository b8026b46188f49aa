//! End-to-end checks of the `sigregime` binary: exit codes, output layout
//! and reproducibility from the emitted config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sigregime");

/// A small toy-detect run that finishes in well under a second.
const SMALL_TOY: &str = r#"
kind = "toy-detect"
seed = 11
n_runs = 2

[path]
models = [
    { family = "gbm", mu = 0.0, sigma = 0.2 },
    { family = "gbm", mu = 0.0, sigma = 0.3 },
]
horizon = 0.5
dt = 0.000566893424036281
entry_rate = 0.05
exit_rate = 0.1

[pipeline]
h1 = 7
h2 = 5
transforms = ["increment", "time-norm", "state-norm"]

[kernel]
sigma = 0.025
dyadic_order = 1

[beliefs]
models = [{ family = "gbm", mu = 0.0, sigma = 0.2 }]
bank_size = 200
names = ["base"]

[detector]
null_draws = 100

[auto]
lags = [1, 2]
window = 20
"#;

fn sigregime(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SIGREGIME_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every output file except the timings, keyed by path relative to `root`.
fn outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else if p.file_name().unwrap() != "timing.json" {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

fn run_ok(config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["run", "--config", s(config), "--out-dir", s(out)];
    args.extend_from_slice(extra);
    let o = sigregime(&args);
    assert!(o.status.success(), "run failed: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_writes_the_documented_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", SMALL_TOY);
    let out = tmp.path().join("out");
    run_ok(&cfg, &out, &[]);
    for f in [
        "config.resolved.toml",
        "report.txt",
        "report.json",
        "metrics.txt",
        "metrics.json",
        "timing.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let series: Vec<_> = fs::read_dir(out.join("series")).unwrap().collect();
    assert!(!series.is_empty());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["kind"], "toy-detect");
}

#[test]
fn same_config_twice_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", SMALL_TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg, &b, &["--threads", "1"]);
    assert_eq!(outputs(&a), outputs(&b));
}

#[test]
fn rerun_from_resolved_config_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", SMALL_TOY);
    let first = tmp.path().join("first");
    run_ok(&cfg, &first, &["--seed", "99"]);
    let again = tmp.path().join("again");
    run_ok(&first.join("config.resolved.toml"), &again, &[]);
    assert_eq!(outputs(&first), outputs(&again));
    let resolved = fs::read_to_string(first.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 99"));
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", SMALL_TOY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&cfg, &a, &[]);
    run_ok(&cfg, &b, &["--seed", "12"]);
    assert_ne!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_TOY.replace("[detector]", "[detector]\nalhpa = 0.1");
    let cfg = write_config(tmp.path(), "bad.toml", &body);
    let o = sigregime(&["run", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alhpa"));
}

#[test]
fn invalid_values_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_TOY.replace("sigma = 0.025", "sigma = -1.0");
    let cfg = write_config(tmp.path(), "bad.toml", &body);
    let o = sigregime(&["run", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));

    let missing = tmp.path().join("nope.toml");
    let o = sigregime(&["run", "--config", s(&missing)]);
    assert_eq!(o.status.code(), Some(2));

    let o = sigregime(&["--threads", "0", "run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_csv_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    fs::write(&csv, "date,px\n2020-01-02,1.0\n2020-01-03,abc\n2020-01-06,zzz\n").unwrap();
    let o = sigregime(&["ingest", "--csv", s(&csv), "--out", s(&tmp.path().join("t.csv"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let body = format!(
        "kind = \"realdata-auto\"\n[data]\ncsv = \"{}\"\n[pipeline]\nh1 = 2\nh2 = 2\n",
        csv.display()
    );
    let cfg = write_config(tmp.path(), "real.toml", &body);
    let o = sigregime(&["run", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn errors_carry_a_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sigregime(&["run", "--config", s(&tmp.path().join("absent.toml"))]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["error"], "config");
}

#[test]
fn ingest_writes_trading_clock_table() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("px.csv");
    fs::write(
        &csv,
        "date,a,b\n2020-01-06,3,30\n2020-01-02,1,10\n2020-01-03,,20\n2020-01-07,4,40\n",
    )
    .unwrap();
    let out = tmp.path().join("nested").join("table.csv");
    let o = sigregime(&["ingest", "--csv", s(&csv), "--out", s(&out), "--periods-per-year", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "timestamp,t,a,b");
    // The row with a missing value is dropped and the rest are sorted.
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2020-01-02,0,1,10"));
    assert!(lines[2].starts_with("2020-01-06,0.25,3,30"));
    assert!(lines[3].starts_with("2020-01-07,0.5,4,40"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("kept 3 of 4 rows"));
}

#[test]
fn bootstrap_null_writes_critical_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", SMALL_TOY);
    let out = tmp.path().join("nulls");
    let o = sigregime(&["bootstrap-null", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(out.join("nulls.json")).unwrap()).unwrap();
    let nulls = doc["nulls"].as_array().unwrap();
    assert_eq!(nulls.len(), 1);
    assert!(out.join("nulls.txt").is_file());

    let cluster = SMALL_TOY.replace("kind = \"toy-detect\"", "kind = \"cluster\"");
    let cfg = write_config(tmp.path(), "cluster.toml", &cluster);
    let o = sigregime(&["bootstrap-null", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            sigregime::config::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 10);
}
