//! End-to-end checks of the rsketch binary.

use std::path::PathBuf;
use std::process::Command;

fn rsketch() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsketch"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rsketch-cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_writes_trace_and_manifest() {
    let dir = temp_dir("gen");
    let trace = dir.join("trace.bin");
    let out = rsketch()
        .args([
            "gen",
            "--out",
            trace.to_str().unwrap(),
            "--seed",
            "7",
            "--keys",
            "500",
            "--length",
            "20000",
            "--synth",
            "--top-k",
            "50",
            "--mass-fraction",
            "0.3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(trace.exists());
    let manifest_path = dir.join("trace.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["records"], 20000);
    assert_eq!(manifest["synth"]["top_k"], 50);
    // Binary record framing: 8 bytes per record.
    assert_eq!(std::fs::metadata(&trace).unwrap().len(), 20000 * 8);
}

#[test]
fn run_produces_result_files() {
    let dir = temp_dir("run");
    let out_dir = dir.join("results");
    let out = rsketch()
        .args([
            "run",
            "--algorithm",
            "residual_coco",
            "--levels",
            "32,12",
            "--theta",
            "0.01",
            "--seed",
            "1,2",
            "--memory-kb",
            "8",
            "--keys",
            "300",
            "--length",
            "20000",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(csv.starts_with(
        "algorithm,config_hash,seed,theta,memory_kb,n,connection,precision,recall,f1,are,throughput_mpps"
    ));
    assert_eq!(csv.trim_end().lines().count(), 3, "header + one row per seed");
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap())
            .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert!(rows[0]["per_layer_f1"].as_array().unwrap().len() == 33);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn run_requires_seed() {
    let out = rsketch().args(["run", "--theta", "0.01"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--seed"), "{err}");
}

#[test]
fn run_accepts_config_file_overriding_flags() {
    let dir = temp_dir("cfg");
    let out_dir = dir.join("results");
    let config = serde_json::json!({
        "trace": { "zipf": { "skew": 1.2, "keys": 200, "length": 10000, "seed": 3 } },
        "algorithm": "coco",
        "memory_kb": 8.0,
        "levels": [32],
        "thetas": [0.02],
        "seeds": [9],
    });
    let config_path = dir.join("exp.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out = rsketch()
        .args([
            "run",
            "--config",
            config_path.to_str().unwrap(),
            // Contradictory flags, all overridden by the file.
            "--algorithm",
            "residual_uss",
            "--theta",
            "0.5",
            "--seed",
            "1",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("coco,"), "config file must win: {row}");
    assert!(row.contains(",9,0.02,"), "seed and theta from the file: {row}");
}

#[test]
fn oracle_exports_ground_truth_csv() {
    let dir = temp_dir("oracle");
    let trace = dir.join("t.csv");
    std::fs::write(
        &trace,
        "10.0.0.1,1\n10.0.0.1,1\n10.0.0.1,1\n10.0.0.2,1\n192.168.0.1,1\n",
    )
    .unwrap();
    let out = rsketch()
        .args([
            "oracle",
            "--trace",
            trace.to_str().unwrap(),
            "--format",
            "csv",
            "--theta",
            "0.5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next().unwrap(), "key,prefix_len,conditional_count");
    // 10.0.0.1 holds 3 of 5 >= 2.5; no other node adds enough residual.
    assert_eq!(lines.next().unwrap(), "10.0.0.1/32,32,3");
    assert!(lines.next().is_none());
}

#[test]
fn ablate_writes_summary() {
    let dir = temp_dir("ablate");
    let out_dir = dir.join("results");
    let out = rsketch()
        .args([
            "ablate",
            "--algorithm",
            "residual_coco",
            "--levels",
            "32,12",
            "--theta",
            "0.02",
            "--seed",
            "4",
            "--memory-kb",
            "8",
            "--keys",
            "200",
            "--length",
            "10000",
            "--reps",
            "2",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("ablation.json")).unwrap())
            .unwrap();
    assert_eq!(summary["repetitions"], 2);
    assert!(summary["upper_updates_with"].as_u64() <= summary["upper_updates_without"].as_u64());
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.trim_end().lines().count(), 5, "header + 2 reps x 2 variants");
}
