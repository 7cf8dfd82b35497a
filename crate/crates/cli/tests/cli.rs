use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[grid]
L = 10.0
n = 64

[pde]
dt = 1e-3
t_end = 0.05
snapshot_stride = 10

[particles]
N = 200
N_list = [50, 200]
dt = 0.01
n_replicas = 3

[study]
kde_bandwidth = 0.7
table_samples = 512
"#;

fn ksmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksmf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let o = ksmf(args);
    assert!(
        o.status.success(),
        "ksmf {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("{SMALL}\n{extra}")).unwrap();
    p
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[pde]\ndt = -1e-3\n").unwrap();
    let out = tmp.path().join("run");
    let o = ksmf(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    fs::write(&cfg, "[pde]\nchi = 1.0\nunknown = 3\n").unwrap();
    let o = ksmf(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn diagnose_reproduces_solver_rows_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[mollifier]\nepsilon = 0.3\n");
    let out = tmp.path().join("run");
    run_ok(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 6);
    for (k, step) in [0, 20, 50].iter().enumerate() {
        let snap = out.join(format!("fields/u_{step:07}.json"));
        let o = ksmf(&["diagnose", s(&snap)]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        let line = text.lines().nth(1).unwrap();
        let want = [1, 3, 6][k];
        assert_eq!(line, rows[want], "step {step}");
    }

    let pair = tmp.path().join("pair");
    run_ok(&[
        "diagnose",
        "--out",
        s(&pair),
        s(&out.join("fields/u_0000000.json")),
        s(&out.join("fields/u_0000050.json")),
    ]);
    let d = fs::read_to_string(pair.join("distances.csv")).unwrap();
    let vals: Vec<f64> = d.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!(vals[0] > 0.0 && vals[2] > 0.0);
    assert!(vals[3] >= -1e-8, "CKP slack {}", vals[3]);
}

#[test]
fn corrupted_snapshot_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "");
    let out = tmp.path().join("run");
    run_ok(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    let header = out.join("fields/u_0000010.json");
    let text = fs::read_to_string(&header).unwrap();
    fs::write(&header, text.replace("ksmf-field-v1", "something-else")).unwrap();
    assert_eq!(ksmf(&["diagnose", s(&header)]).status.code(), Some(4));
    fs::write(out.join("fields/u_0000020.f64"), [0u8; 12]).unwrap();
    assert_eq!(
        ksmf(&["diagnose", s(&out.join("fields/u_0000020.json"))]).status.code(),
        Some(4)
    );
    assert_eq!(ksmf(&["diagnose", s(&tmp.path().join("missing.json"))]).status.code(), Some(4));
}

#[test]
fn eps_convergence_single_and_duplicate_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "one.toml", "[mollifier]\nepsilon_list = [0.3]\n");
    let out = tmp.path().join("one");
    run_ok(&["eps-convergence", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("rates.csv")).unwrap().lines().count(), 2);
    let m = manifest(&out);
    assert!(m["summary"]["fits"].as_object().unwrap().is_empty());

    let cfg = write_config(tmp.path(), "dup.toml", "[mollifier]\nepsilon_list = [0.4, 0.2, 0.2, 0.0]\n");
    let out = tmp.path().join("dup");
    run_ok(&["eps-convergence", "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("rates.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[2], lines[3]);
    let zero: Vec<&str> = lines[4].split(',').collect();
    assert_eq!(&zero[1..4], &["0.0000000000000000e0"; 3]);
    let m = manifest(&out);
    assert!(m["summary"]["fits"]["sup_l2"]["slope"].as_f64().unwrap() > 0.9);
}

#[test]
fn same_v_coupling_has_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[mollifier]\nepsilon_list = [0.4, 0.2]\n",
    );
    let text = fs::read_to_string(&cfg).unwrap().replace("[study]\n", "[study]\nsame_v = true\ninclude_interacting = false\n");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("run");
    run_ok(&["coupling-study", "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("rates.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[5], "");
    }
    let m = manifest(&out);
    assert!(m["summary"]["fit_err_mid_vs_lim"].is_null());
}

#[test]
fn seed_changes_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[mollifier]\nepsilon_list = [0.4, 0.2]\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_ok(&["coupling-study", "--config", s(&cfg), "--out", s(&a), "--seed", "1"]);
    run_ok(&["coupling-study", "--config", s(&cfg), "--out", s(&b), "--seed", "2"]);
    assert_ne!(
        fs::read_to_string(a.join("rates.csv")).unwrap(),
        fs::read_to_string(b.join("rates.csv")).unwrap()
    );
    assert_eq!(manifest(&a)["seed"], 1);
    assert_eq!(manifest(&b)["config"]["particles"]["seed"], 2);
}

#[test]
fn chaos_lambda_mode_records_decreasing_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("n_replicas = 3\n", "n_replicas = 2\nlambda = 0.05\n")
        .replace("N_list = [50, 200]", "N_list = [20, 40, 80]");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("run");
    run_ok(&["chaos-study", "--config", s(&cfg), "--out", s(&out)]);
    let m = manifest(&out);
    let by_n = &m["summary"]["epsilon_by_n"];
    let eps: Vec<f64> = ["20", "40", "80"].iter().map(|k| by_n[k].as_f64().unwrap()).collect();
    assert!(eps[0] > eps[1] && eps[1] > eps[2]);
    assert!((eps[0] - (0.05 * 20f64.ln()).powf(-0.25)).abs() < 1e-12);
}

#[test]
fn chaos_singleton_has_no_trend() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "");
    let text = fs::read_to_string(&cfg).unwrap().replace("N_list = [50, 200]", "N_list = [60]");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("run");
    run_ok(&["chaos-study", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("rates.csv")).unwrap().lines().count(), 2);
    let m = manifest(&out);
    assert!(m["summary"]["kde_l1_decreasing"].is_null());
    assert!(m["summary"]["err_int_vs_mid_decreasing"].is_null());
}

#[test]
fn resolved_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "");
    let a = tmp.path().join("a");
    run_ok(&["solve-pde", "--config", s(&cfg), "--out", s(&a)]);
    let b = tmp.path().join("b");
    run_ok(&["solve-pde", "--config", s(&a.join("config.toml")), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("diagnostics.csv")).unwrap(),
        fs::read(b.join("diagnostics.csv")).unwrap()
    );
    let m = manifest(&a);
    assert_eq!(m["status"], "VALID");
    assert_eq!(m["config"]["mollifier"]["epsilon"], 0.0);
    assert_eq!(m["config"]["grid"]["L"], 10.0);
}

#[test]
fn json_config_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"grid": {"L": 10.0, "n": 64}, "pde": {"dt": 1e-3, "t_end": 0.01}}"#,
    )
    .unwrap();
    let out = tmp.path().join("run");
    run_ok(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(manifest(&out)["config"]["pde"]["t_end"], 0.01);
}

#[test]
fn tail_monitor_marks_run_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(
        &cfg,
        "[grid]\nL = 8.0\nn = 64\n[pde]\ndt = 1e-3\nt_end = 0.2\nsnapshot_stride = 50\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    run_ok(&["solve-pde", "--config", s(&cfg), "--out", s(&out)]);
    let m = manifest(&out);
    assert_eq!(m["status"], "INVALID");
    assert_eq!(m["flags"]["tail_mass"], true);
}
