//! End-to-end runs of the binary: output reproducibility (byte identical
//! across runs and thread counts), exit-code contract, and task smoke
//! checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bystander"))
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_into(config: &Path, dir: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn read_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn criterion_11_byte_identical_reruns() {
    // deterministic tasks and the seeded stochastic task produce byte
    // identical outputs across reruns and thread counts
    for (config, extra_a, extra_b) in [
        ("fluor_witness.json", vec![], vec![]),
        ("fluor_cpf_deterministic.json", vec![], vec![]),
        ("fluor_trajectories.json", vec!["--threads", "1"], vec!["--threads", "4"]),
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        let out_a = run_into(&repo_config(config), &dir_a, &extra_a);
        let out_b = run_into(&repo_config(config), &dir_b, &extra_b);
        assert!(out_a.status.success(), "{config}: {}", String::from_utf8_lossy(&out_a.stderr));
        assert!(out_b.status.success());
        let files_a = read_outputs(&dir_a);
        let files_b = read_outputs(&dir_b);
        assert_eq!(files_a.len(), files_b.len());
        for ((name_a, bytes_a), (name_b, bytes_b)) in files_a.iter().zip(&files_b) {
            assert_eq!(name_a, name_b);
            assert_eq!(bytes_a, bytes_b, "{config}: {name_a} differs between runs");
        }
        assert!(files_a.iter().any(|(n, _)| n == "run_manifest.json"));
    }
    println!("criterion 11: PASS (byte-identical outputs across reruns and thread counts)");
}

#[test]
fn seed_override_changes_stochastic_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let cfg = repo_config("fluor_trajectories.json");
    assert!(run_into(&cfg, &dir_a, &[]).status.success());
    assert!(run_into(&cfg, &dir_b, &["--seed", "99"]).status.success());
    let a = fs::read(dir_a.join("trajectories.jsonl")).unwrap();
    let b = fs::read(dir_b.join("trajectories.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn verify_task_reports_holds() {
    for config in ["multipartite_verify.json", "custom_verify.json"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_into(&repo_config(config), tmp.path(), &[]);
        assert!(out.status.success());
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("run_manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["results"]["holds"], serde_json::Value::Bool(true), "{config}");
        // manifest checksums match the files on disk
        for entry in manifest["outputs"].as_array().unwrap() {
            let name = entry["file"].as_str().unwrap();
            let bytes = fs::read(tmp.path().join(name)).unwrap();
            let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
            sha2::Digest::update(&mut hasher, &bytes);
            assert_eq!(entry["sha256"].as_str().unwrap(), hex::encode(sha2::Digest::finalize(hasher)));
        }
    }
}

#[test]
fn random_scheme_values_are_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(&repo_config("fluor_cpf_random.json"), tmp.path(), &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("cpf.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().trim_end().split(',').collect();
    let value_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("value_"))
        .map(|(k, _)| k)
        .collect();
    assert!(!value_cols.is_empty());
    for line in lines {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        for &k in &value_cols {
            let v: f64 = cells[k].parse().unwrap();
            assert!(v.abs() <= 1e-10, "nonzero random-scheme value {v}");
        }
    }
}

#[test]
fn witness_marks_divergences() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(&repo_config("fluor_witness.json"), tmp.path(), &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("witness.csv")).unwrap();
    assert!(csv.contains(",div,"), "expected divergence tokens in the rate column");
}

#[test]
fn exit_code_2_on_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    // malformed JSON
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = run_into(&bad, &tmp.path().join("o1"), &[]);
    assert_eq!(out.status.code(), Some(2));
    // schema violation: unknown task kind
    let bad2 = tmp.path().join("bad2.json");
    fs::write(
        &bad2,
        r#"{"schema_version":1,"model":{"kind":"fluor","gamma":1.0,"omega":1.0},
           "grid":{"t_max":1.0,"points":10},"task":{"kind":"dance"}}"#,
    )
    .unwrap();
    let out = run_into(&bad2, &tmp.path().join("o2"), &[]);
    assert_eq!(out.status.code(), Some(2));
    // stochastic task without a seed
    let bad3 = tmp.path().join("bad3.json");
    fs::write(
        &bad3,
        r#"{"schema_version":1,"model":{"kind":"fluor","gamma":1.0,"omega":1.0},
           "grid":{"t_max":1.0,"points":10},"task":{"kind":"trajectories","count":5}}"#,
    )
    .unwrap();
    let out = run_into(&bad3, &tmp.path().join("o3"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_code_3_on_numerical_failure() {
    // structurally invalid coupling: negative rate
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        r#"{
          "schema_version": 1,
          "model": {
            "kind": "custom", "system_dim": 2, "env_dim": 2,
            "coupling": {
              "gamma": [[[-1.0, 0.0]]],
              "env_ops": [[[[0.0,0.0],[0.0,0.0]],[[1.0,0.0],[0.0,0.0]]]],
              "sys_maps": [[{ "kraus": [[[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[-1.0,0.0]]]] }]]
            },
            "system_initial": "plus_x", "env_initial": "ground"
          },
          "grid": { "t_max": 1.0, "points": 10 },
          "task": { "kind": "verify" }
        }"#,
    )
    .unwrap();
    let out = run_into(&bad, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evolve_emits_state_series_with_units_header() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("evolve.json");
    fs::write(
        &cfg,
        r#"{"schema_version":1,"model":{"kind":"fluor","gamma":2.0,"omega":2.0},
           "grid":{"t_max":3.0,"points":30},"task":{"kind":"evolve"}}"#,
    )
    .unwrap();
    let out = run_into(&cfg, tmp.path(), &[]);
    assert!(out.status.success());
    let csv = fs::read_to_string(tmp.path().join("evolve.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t*gamma,"));
    assert!(header.contains("rho_s_01_re"));
    // time column is in units of 1/gamma: the last row starts at 6.0
    let last = csv.lines().filter(|l| !l.trim().is_empty()).last().unwrap();
    assert!(last.starts_with('6'), "last={last}");
}
