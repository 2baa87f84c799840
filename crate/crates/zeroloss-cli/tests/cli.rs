use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn zeroloss(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zeroloss"))
        .args(args)
        .env("ZEROLOSS_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const RING: &str = r#"{
  "loss": {"id": "ring-sine"},
  "scheme": {"id": "anti-pgd"},
  "plan": {"alpha": 0.3, "sigma": 0.03, "horizon": 1.0},
  "w0": [0.3, 1.6],
  "seeds": [5, 6],
  "output_dir": "ring",
  "record_points": 100
}"#;

#[test]
fn simulate_writes_trajectories_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ring.json", RING);
    let out = zeroloss(dir.path(), &["simulate", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ring/seed_5.csv")).unwrap();
    assert!(csv.starts_with("t,step,w_1,w_2,loss,grad_norm,dist_gamma,theta\n"));
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ring/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["runs"].as_array().unwrap().len(), 2);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn rerun_from_manifest_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ring.json", RING);
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    assert!(zeroloss(&first, &["simulate", &cfg]).status.success());
    let manifest = first.join("ring/manifest.json");
    assert!(zeroloss(&second, &["simulate", manifest.to_str().unwrap()])
        .status
        .success());
    for f in ["seed_5.csv", "seed_6.csv"] {
        assert_eq!(
            fs::read(first.join("ring").join(f)).unwrap(),
            fs::read(second.join("ring").join(f)).unwrap()
        );
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RING.replace("ring-sine", "no-such-loss");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let out = zeroloss(dir.path(), &["simulate", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-loss"));

    let mismatch = RING.replace("anti-pgd", "label-noise");
    let cfg = write_config(dir.path(), "mismatch.json", &mismatch);
    assert_eq!(zeroloss(dir.path(), &["limit-flow", &cfg]).status.code(), Some(2));
    assert_eq!(zeroloss(dir.path(), &["accept", "--only", "42"]).status.code(), Some(2));
}

#[test]
fn compare_fails_when_errors_grow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ring.json", RING);
    let good = zeroloss(dir.path(), &["compare", &cfg, "--levels", "0.3:0.03,0.075:0.0075"]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let bad = zeroloss(dir.path(), &["compare", &cfg, "--levels", "0.075:0.0075,0.3:0.03"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn verify_phi_and_reg_report_on_ring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ring.json", RING);
    let out = zeroloss(dir.path(), &["verify-phi", &cfg, "--point", "-0.6,0.8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], Value::Bool(true));

    let out = zeroloss(dir.path(), &["reg-report", &cfg, "--probe", "0,1"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], "nondegenerate");
    // ½ΔL at (0, 1) equals 1 + 0.7 sin 0.
    let reg = v["probes"][0]["analytic"]["value"].as_f64().unwrap();
    assert!((reg - 1.0).abs() < 1e-9);
}

#[test]
fn label_noise_limit_is_a_flow_and_sgld_limit_is_an_sde() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("data.csv"),
        "x_1,x_2,y\n1,0,1\n0,1,0.25\n0.5,-0.5,0.375\n",
    )
    .unwrap();
    let label = write_config(
        dir.path(),
        "label.json",
        r#"{"loss": {"id": "olm", "d_in": 2, "data": {"csv": "data.csv"}},
            "scheme": {"id": "label-noise"},
            "plan": {"alpha": 0.02, "sigma": 0.5, "horizon": 0.2},
            "w0": [1.0, 0.5, 1.0, 0.5], "seeds": [0], "output_dir": "label"}"#,
    );
    let out = zeroloss(dir.path(), &["limit-flow", &label]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["limit"], "constrained-flow");
    assert!(dir.path().join("label/dataset.csv").exists());

    let sgld = write_config(
        dir.path(),
        "sgld.json",
        &RING.replace("anti-pgd", "sgld").replace("0.03", "1.0"),
    );
    let out = zeroloss(dir.path(), &["limit-flow", &sgld]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["limit"], "constrained-sde");
    assert!(dir.path().join("ring/limit_sde_seed_6.csv").exists());
}
