//! End-to-end checks of the command-line surface: outputs, budgets, exit
//! codes, and reproducibility of the published reference ranking.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::tempdir;

fn semvox() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semvox"))
}

fn write_scene_spec(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let spec = serde_json::json!({
        "seed": seed,
        "extent": 8.0,
        "ground_density": 2.0,
        "objects": [
            {"class": "car", "count": 2, "points_per_object": 40},
            {"class": "pedestrian", "count": 1, "points_per_object": 20}
        ]
    });
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

fn desk_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "voxel": {
            "voxel_size": [1.0, 1.0, 1.0],
            "range_min": [0.0, 0.0, 0.0],
            "range_max": [8.0, 8.0, 8.0]
        },
        "toy": {
            "feature_dim": 8,
            "encoder_hidden": [8],
            "points_per_voxel_out": 2,
            "steps": 4,
            "image_patches": 4,
            "image_patch_dim": 3,
            "semantic_hidden": [8]
        }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const REFERENCE_METRICS_CSV: &str = "\
class,chamfer_gt_to_pred,chamfer_pred_to_gt,occupancy_accuracy
car,0.181647,0.436208,0.977032
pedestrian,0.180714,0.438906,0.977074
construction_vehicle,0.180739,0.437317,0.976535
motorcycle,0.179613,0.436273,0.976579
truck,0.181256,0.434774,0.977436
bus,0.180607,0.437096,0.977038
traffic_cone,0.181641,0.435008,0.976332
barrier,0.182271,0.434331,0.977185
trailer,0.178449,0.433590,0.976840
bicycle,0.179253,0.434264,0.977334
";

#[test]
fn voxelize_matches_library_and_exports_jsonl() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 5);
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["voxelize", "--config"])
        .arg(&cfg)
        .arg("--scene")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));

    // independent recomputation through the library
    let scene_spec = semvox::pointcloud::SceneSpec::from_file(&spec).unwrap();
    let cloud = semvox::pointcloud::generate_scene(&scene_spec);
    let grid = semvox::voxelize(&cloud, &semvox::VoxelGridConfig::unit(8.0));

    let jsonl = std::fs::read_to_string(out_dir.join("grid_0.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), grid.num_voxels());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "voxelize");
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("voxelize_stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats[0]["num_voxels"], grid.num_voxels());
}

#[test]
fn missing_scan_exits_with_usage_code() {
    let dir = tempdir().unwrap();
    let out = semvox()
        .args(["voxelize", "--scan", "/nonexistent/scan.bin", "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn dry_run_echoes_config_and_writes_nothing() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 6);
    let out_dir = dir.path().join("out");
    let out = run_ok(semvox()
        .args(["voxelize", "--dry-run", "--scene"])
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("config_sha256"));
    assert!(stdout.contains("would write"));
    assert!(!out_dir.exists());
}

#[test]
fn mask_meets_budget_and_echoes_policy() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 7);
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["mask", "--policy", "uniform", "--rho", "0.7", "--seed", "11", "--config"])
        .arg(&cfg)
        .arg("--scene")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    let mask: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("mask_0.json")).unwrap())
            .unwrap();
    assert_eq!(mask["policy"]["kind"], "uniform");
    assert_eq!(mask["policy"]["seed"], 11);
    let masked = mask["masked"].as_array().unwrap().len();
    let visible = mask["visible"].as_array().unwrap().len();
    let n = masked + visible;
    assert_eq!(masked, semvox::masking::mask_budget(0.7, n));
}

#[test]
fn class_target_strict_budget_overflow_is_domain_error() {
    let dir = tempdir().unwrap();
    // Scene that is almost all car: the car target set exceeds any
    // 0.2-ratio budget.
    let path = dir.path().join("car.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "seed": 3, "extent": 8.0, "ground_density": 0.0,
            "objects": [{"class": "car", "count": 4, "points_per_object": 50}]
        })
        .to_string(),
    )
    .unwrap();
    let cfg = desk_config(dir.path());
    let out = semvox()
        .args([
            "mask", "--policy", "class-target", "--class", "car", "--rho", "0.2", "--seed", "1",
            "--strict-budget", "--config",
        ])
        .arg(&cfg)
        .arg("--scene")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the masking budget"));
}

#[test]
fn analyze_importance_from_metrics_csv_reproduces_reference_ranks() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    std::fs::write(&csv, REFERENCE_METRICS_CSV).unwrap();
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["analyze-importance", "--metrics-csv"])
        .arg(&csv)
        .arg("--out")
        .arg(&out_dir));
    let report = std::fs::read_to_string(out_dir.join("importance_report.csv")).unwrap();
    let expect = [
        ("car", "7.5", "high", "0.75"),
        ("pedestrian", "7.5", "high", "0.75"),
        ("construction_vehicle", "7.5", "high", "0.75"),
        ("motorcycle", "5", "medium", "0.95"),
        ("truck", "5.5", "medium", "0.95"),
        ("bus", "6", "medium", "0.95"),
        ("traffic_cone", "6.5", "medium", "0.95"),
        ("barrier", "6.5", "medium", "0.95"),
        ("trailer", "1", "low", "1.05"),
        ("bicycle", "2", "low", "1.05"),
    ];
    for (class, mean_rank, level, weight) in expect {
        let row = report
            .lines()
            .find(|l| l.starts_with(&format!("{class},")))
            .unwrap_or_else(|| panic!("no row for {class}"));
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[4], mean_rank, "{class} mean rank");
        assert_eq!(cols[5], level, "{class} level");
        assert_eq!(cols[6], weight, "{class} weight");
    }
    // the emitted policy carries the reference weight table
    let policy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("policy.json")).unwrap())
            .unwrap();
    assert_eq!(policy["policy"]["kind"], "importance-weighted");
    assert_eq!(policy["policy"]["weights"]["background"], 1.2);
    assert_eq!(policy["levels"]["car"], "high");
    assert_eq!(policy["filled_levels"].as_array().unwrap().len(), 0);
}

#[test]
fn analyze_importance_end_to_end_writes_all_artifacts() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 9);
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["analyze-importance", "--seed", "21", "--steps", "3", "--seeds", "1,2", "--config"])
        .arg(&cfg)
        .arg("--scene")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    for name in [
        "importance_report.csv",
        "importance_report.json",
        "policy.json",
        "mask_stats.json",
        "loss_log.csv",
        "run_manifest.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("mask_stats.json")).unwrap())
            .unwrap();
    // 2 classes present x 1 scene x 2 seeds
    assert_eq!(stats["cells"].as_array().unwrap().len(), 4);
    assert_eq!(stats["failures"].as_array().unwrap().len(), 0);
}

#[test]
fn train_toy_logs_losses_and_saves_head() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 10);
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["train-toy", "--seed", "31", "--steps", "5", "--lambda-sem", "0.25", "--config"])
        .arg(&cfg)
        .arg("--scene")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    let log = std::fs::read_to_string(out_dir.join("loss_log.csv")).unwrap();
    assert!(log.starts_with("step,l_img,l_c,l_occ,l_sem,l_total"));
    assert_eq!(log.lines().count(), 1 + 6); // header + steps + 1
    let head = semvox::head::SemanticHead::load(out_dir.join("semantic_head.ckpt")).unwrap();
    assert_eq!(head.feature_dim, 8);
    assert_eq!(head.num_classes, 11);
}

#[test]
fn rerunning_a_command_is_bit_identical() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 12);
    let cfg = desk_config(dir.path());
    let run = |out_dir: &Path| {
        run_ok(semvox()
            .args(["train-toy", "--seed", "77", "--steps", "4", "--config"])
            .arg(&cfg)
            .arg("--scene")
            .arg(&spec)
            .arg("--out")
            .arg(out_dir));
        std::fs::read(out_dir.join("loss_log.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
}

#[test]
fn compare_sweeps_lambda_and_verifies_budgets() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 13);
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_ok(semvox()
        .args([
            "compare",
            "--policies",
            "uniform",
            "--lambdas",
            "0,0.25",
            "--rho",
            "0.7",
            "--seed",
            "41",
            "--steps",
            "4",
            "--config",
        ])
        .arg(&cfg)
        .arg("--scene")
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir));
    assert!(String::from_utf8_lossy(&out.stdout).contains("budget check"));
    let comparison: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("comparison.json")).unwrap())
            .unwrap();
    let entries = comparison["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    // lambda = 0: the total equals the base loss at every logged step
    let zero = &entries[0];
    assert_eq!(zero["lambda_sem"], 0.0);
    for step in zero["loss_log"].as_array().unwrap() {
        assert_eq!(step["l_total"], step["l_base"]);
    }
    // both entries saw identical masks, so step-0 base losses agree exactly
    let first0 = &zero["loss_log"][0];
    let first1 = &entries[1]["loss_log"][0];
    for key in ["l_img", "l_c", "l_occ"] {
        assert_eq!(first0[key], first1[key], "{key} differs at step 0");
    }
    // and the lambda = 0.25 trajectory actually diverges afterwards
    let last0 = zero["loss_log"].as_array().unwrap().last().unwrap().clone();
    let last1 = entries[1]["loss_log"].as_array().unwrap().last().unwrap().clone();
    assert_ne!(last0["l_total"], last1["l_total"]);
}

#[test]
fn compare_with_one_policy_is_usage_error() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 14);
    let out = semvox()
        .args(["compare", "--policies", "uniform", "--seed", "1", "--scene"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn randomized_commands_require_a_seed() {
    let dir = tempdir().unwrap();
    let spec = write_scene_spec(dir.path(), "scene.json", 15);
    let out = semvox()
        .args(["mask", "--policy", "uniform", "--scene"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no seed"));
}

#[test]
fn report_command_round_trips_its_own_csv() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("metrics.csv");
    std::fs::write(&csv, REFERENCE_METRICS_CSV).unwrap();
    let first = dir.path().join("first");
    run_ok(semvox()
        .args(["report", "--metrics-csv"])
        .arg(&csv)
        .arg("--out")
        .arg(&first));
    // feed the emitted report back in: ranks must be unchanged
    let second = dir.path().join("second");
    run_ok(semvox()
        .args(["report", "--metrics-csv"])
        .arg(first.join("importance_report.csv"))
        .arg("--out")
        .arg(&second));
    let a = std::fs::read_to_string(first.join("importance_report.csv")).unwrap();
    let b = std::fs::read_to_string(second.join("importance_report.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scan_files_flow_through_the_cli() {
    let dir = tempdir().unwrap();
    // two points: one car (raw label 17), one vegetation (raw 30)
    let mut bytes = Vec::new();
    for v in [1.5f32, 1.5, 1.5, 0.5, 0.0, 2.5, 2.5, 0.5, 10.0, 3.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let scan = dir.path().join("sweep.bin");
    std::fs::write(&scan, bytes).unwrap();
    let labels = dir.path().join("sweep.label");
    std::fs::write(&labels, [17u8, 30]).unwrap();
    let cfg = desk_config(dir.path());
    let out_dir = dir.path().join("out");
    run_ok(semvox()
        .args(["voxelize", "--layout", "xyzir5", "--config"])
        .arg(&cfg)
        .arg("--scan")
        .arg(&scan)
        .arg("--labels")
        .arg(&labels)
        .arg("--out")
        .arg(&out_dir));
    let jsonl = std::fs::read_to_string(out_dir.join("grid_0.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    assert!(jsonl.contains("\"car\""), "mapped label missing: {jsonl}");
    assert!(jsonl.contains("\"background\""));
}
