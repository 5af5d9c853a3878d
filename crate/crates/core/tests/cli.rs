use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spinhall::harness::{sha256_hex, Manifest, Status};

const KM: &str = r#"{"lattice": "honeycomb", "s": 0.5, "R": 2, "t_hop": 1.0, "lambda_SO": 0.2, "lambda_Ra": 0.0, "lambda_Ze": 0.0, "lambda_dis": 0.0}"#;

fn spinhall(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spinhall"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, task: &str, model: &str, rest: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!(r#"{{"format_version": 1, "task": "{task}", "model": {model}{rest}}}"#)).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn transfer_run_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "spin-chern-transfer", KM, "");
    let out = dir.path().join("out");
    let o = spinhall(&["run"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("spin_chern_transfer.csv"));
    assert_eq!(rows[0][..2], ["l", "SCh"]);
    assert_eq!(rows[1][..2], ["+1/2", "1"]);
    assert_eq!(rows[2][..2], ["-1/2", "-1"]);
    assert_eq!(csv_rows(&out.join("transfer_diagnostics.csv"))[0], ["l", "k", "margin", "residual", "phase"]);

    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, Status::Ok);
    assert_eq!(m.config_sha256, sha256_hex(&fs::read(&cfg).unwrap()));
    let mut listed: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    for f in &m.files {
        assert_eq!(f.sha256, sha256_hex(&fs::read(out.join(&f.path)).unwrap()));
    }
}

#[test]
fn malformed_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"format_version": 1, "task": "#).unwrap();
    let out = dir.path().join("out");
    for verb in ["run", "sweep", "validate"] {
        let o = spinhall(&[verb], Some(&bad), &out);
        assert_eq!(o.status.code(), Some(2), "{verb}");
    }
    assert!(!out.exists());

    let unknown = write_config(dir.path(), "u.json", "gap-report", KM, r#", "temperature": 4"#);
    assert_eq!(spinhall(&["run"], Some(&unknown), &out).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(spinhall(&["run"], Some(&missing), &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn budget_guard_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "spin-chern-realspace", KM, r#", "params": {"N": 80}"#);
    let out = dir.path().join("out");
    let o = spinhall(&["validate"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force-budget"));
    assert_eq!(spinhall(&["validate", "--force-budget"], Some(&cfg), &out).status.code(), Some(0));
    assert!(!out.exists());
}

#[test]
fn guard_failures_exit_3_with_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let graphene = KM.replace("\"lambda_SO\": 0.2", "\"lambda_SO\": 0.0");
    let cfg = write_config(dir.path(), "g.json", "gap-report", &graphene, "");
    let out = dir.path().join("out");
    let o = spinhall(&["run"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[guard: gap hypothesis violated]"));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.status, Status::Failed);
    assert_eq!(m.guard.as_deref(), Some("gap hypothesis violated"));
}

#[test]
fn partial_results_are_flushed_on_seed_failure() {
    let dir = tempfile::tempdir().unwrap();
    let rashba = KM.replace("\"lambda_Ra\": 0.0", "\"lambda_Ra\": 1.0");
    let cfg = write_config(dir.path(), "r.json", "spin-chern-realspace", &rashba, r#", "params": {"N": 16}"#);
    let out = dir.path().join("out");
    let o = spinhall(&["run"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(3));
    let m = Manifest::load(&out).unwrap();
    assert_eq!((m.status, m.guard.as_deref()), (Status::Failed, Some("islands not separated")));
    // the table exists (header only) and the failure is described in the JSON
    assert_eq!(csv_rows(&out.join("spin_chern_realspace.csv")).len(), 1);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("spin_chern_realspace.json")).unwrap()).unwrap();
    assert_eq!(doc["failed"][0]["guard"], "islands not separated");
}

#[test]
fn identical_configs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let disordered = KM.replace("\"lambda_dis\": 0.0", "\"lambda_dis\": 0.06, \"seed\": 5");
    let cases = [
        ("spin-chern-realspace", r#", "params": {"N": 10}"#, "spin_chern_realspace.csv"),
        ("edge-current", r#", "params": {"N2": 32, "N_k": 24}"#, "edge_current.csv"),
    ];
    for (task, params, file) in cases {
        let cfg = write_config(dir.path(), "c.json", task, &disordered, params);
        let a = dir.path().join(format!("{task}-a"));
        let b = dir.path().join(format!("{task}-b"));
        assert_eq!(spinhall(&["run"], Some(&cfg), &a).status.code(), Some(0));
        assert_eq!(spinhall(&["run", "--threads", "1"], Some(&cfg), &b).status.code(), Some(0));
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{task}");
    }
}

#[test]
fn sweep_rows_follow_grid_order_and_record_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        "gap-report",
        KM,
        r#", "sweep": {"parameter": "lambda_SO", "values": [0.0, 0.2], "seeds": [3, 1]}"#,
    );
    let out = dir.path().join("out");
    let o = spinhall(&["sweep"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0][..5], ["lambda_SO", "sweep_seed", "status", "guard", "E_g"]);
    let keys: Vec<(&str, &str, &str)> = rows[1..].iter().map(|r| (r[0].as_str(), r[1].as_str(), r[2].as_str())).collect();
    assert_eq!(keys, [("0", "3", "failed"), ("0", "1", "failed"), ("0.2", "3", "ok"), ("0.2", "1", "ok")]);
    assert_eq!(rows[1][3], "gap hypothesis violated");
    let m = Manifest::load(&out).unwrap();
    assert_eq!((m.status, m.checkpoint.clone()), (Status::Ok, None));
    assert!(!out.join("sweep.checkpoint.jsonl").exists());
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", "edge-current", KM, r#", "sweep": {"parameter": "lambda_Ra", "values": []}"#);
    let out = dir.path().join("out");
    assert_eq!(spinhall(&["sweep"], Some(&cfg), &out).status.code(), Some(0));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("lambda_Ra,sweep_seed,status,guard,lambda,coupling,value,comm_norm,j_e_lower"));
}

#[test]
fn sweep_resumes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        "gap-report",
        KM,
        r#", "sweep": {"parameter": "lambda_SO", "values": [0.2, 0.3]}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(spinhall(&["sweep"], Some(&cfg), &out).status.code(), Some(0));
    let fresh = csv_rows(&out.join("sweep.csv"));

    // pretend the sweep was interrupted after point 0, with a recognizable record
    let mut m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["status"] = "RUNNING".into();
    m["checkpoint"] = serde_json::json!({"file": "sweep.checkpoint.jsonl", "completed": 1, "total": 2});
    fs::write(out.join("manifest.json"), m.to_string()).unwrap();
    let sentinel = r#"{"index":0,"value":0.2,"seed":0,"ok":true,"guard":null,"error":null,"rows":[["9","9","9","9","9","9"]]}"#;
    fs::write(out.join("sweep.checkpoint.jsonl"), format!("{sentinel}\n{{\"index\":1,\"va")).unwrap();

    assert_eq!(spinhall(&["sweep"], Some(&cfg), &out).status.code(), Some(0));
    let resumed = csv_rows(&out.join("sweep.csv"));
    assert_eq!(resumed[1][4..], ["9", "9", "9", "9", "9", "9"]);
    assert_eq!(resumed[2], fresh[2]);
}

#[test]
fn realspace_sweep_over_seeds_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        "spin-chern-realspace",
        KM,
        r#", "params": {"N": 12}, "sweep": {"parameter": "lambda_dis", "values": [0.06], "seeds": [1,2,3,4,5,6,7,8,9,10]}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(spinhall(&["sweep"], Some(&cfg), &out).status.code(), Some(0));
    let rows = csv_rows(&out.join("sweep.csv"));
    let col = |name: &str| rows[0].iter().position(|h| h == name).unwrap();
    let (l, rounded) = (col("l"), col("rounded"));
    for level in ["+1/2", "-1/2"] {
        let vals: Vec<&str> = rows[1..].iter().filter(|r| r[l] == level).map(|r| r[rounded].as_str()).collect();
        assert_eq!(vals.len(), 10);
        assert!(vals.iter().all(|v| *v == vals[0]), "{level}: {vals:?}");
    }
}

#[test]
fn rashba_sweep_deviation_grows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.json",
        "edge-current",
        KM,
        r#", "params": {"N2": 32, "N_k": 48}, "sweep": {"parameter": "lambda_Ra", "values": [0.0, 0.01, 0.02, 0.04]}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(spinhall(&["sweep"], Some(&cfg), &out).status.code(), Some(0));
    let rows = csv_rows(&out.join("sweep.csv"));
    let j = rows[0].iter().position(|h| h == "j_e_lower").unwrap();
    let js: Vec<f64> = rows[1..].iter().map(|r| r[j].parse().unwrap()).collect();
    let dev: Vec<f64> = js.iter().map(|x| (x - js[0]).abs()).collect();
    assert!(dev.windows(2).all(|w| w[0] <= w[1]), "{dev:?}");
    assert!(dev[3] < 0.05, "{dev:?}");
}

#[test]
fn report_renders_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "spin-chern-transfer", KM, r#", "params": {"N_k": 64}"#);
    let out = dir.path().join("out");
    assert_eq!(spinhall(&["run"], Some(&cfg), &out).status.code(), Some(0));
    let o = spinhall(&["report"], None, &out);
    assert_eq!(o.status.code(), Some(0));
    let plot: Value = serde_json::from_str(&fs::read_to_string(out.join("spin_chern_transfer.plot.json")).unwrap()).unwrap();
    assert_eq!(plot["series"]["SCh"], serde_json::json!([1.0, -1.0]));
    assert_eq!(plot["series"]["l"], serde_json::json!(["+1/2", "-1/2"]));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.files.iter().filter(|f| f.kind == "plot").count(), 2);
    // rerunning the report does not duplicate manifest entries
    assert_eq!(spinhall(&["report"], None, &out).status.code(), Some(0));
    assert_eq!(Manifest::load(&out).unwrap().files.len(), m.files.len());
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", "spin-chern-transfer", KM, r#", "params": {"N_k": 64}"#);
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_spinhall"))
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("SPINHALL_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(Manifest::load(&out).unwrap().threads, 2);
}
