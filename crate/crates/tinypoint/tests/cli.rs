//! End-to-end tests of the command-line binary: exit codes, file outputs,
//! and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tinypoint::data::pcds::read_dataset;
use tinypoint::model::config::save_model_config;
use tinypoint::model::{Scale, ScaleSpec, StageSpec, SupernetSpec};
use tinypoint::trainer::read_metrics_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tinypoint"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn tinypoint");
    assert!(
        out.status.success(),
        "command {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn tinypoint");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

/// A four-class model small enough for sub-second epochs.
fn write_small_model(dir: &Path) -> PathBuf {
    let spec = SupernetSpec {
        name: "cli-test".to_string(),
        num_classes: 4,
        stages: vec![
            StageSpec {
                npoint: 8,
                scales: vec![ScaleSpec { radius: 0.4, nsample: 4, mlp: vec![8, 8] }],
            },
            StageSpec {
                npoint: 4,
                scales: vec![ScaleSpec { radius: 0.8, nsample: 4, mlp: vec![16, 16] }],
            },
        ],
        global_mlp: vec![16, 32],
        head_hidden: vec![16],
        dropout: 0.2,
        tiny_scale: Scale { num: 1, den: 4 },
        width_options: 3,
    };
    let path = dir.join("model.toml");
    save_model_config(&spec, &path).unwrap();
    path
}

/// Four classes, 32 points, a handful of clouds.
fn gen_small_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    run_ok(&[
        "gen-data",
        "--classes",
        "sphere,cube,cylinder,cone",
        "--train-per-class",
        "6",
        "--test-per-class",
        "3",
        "--points",
        "32",
        "--out",
        data.to_str().unwrap(),
    ]);
    data
}

#[test]
fn help_and_version_exit_zero_usage_errors_exit_one() {
    let (code, _) = run_code(&["--help"]);
    assert_eq!(code, 0);
    let (code, _) = run_code(&["--version"]);
    assert_eq!(code, 0);
    let (code, _) = run_code(&["frobnicate"]);
    assert_eq!(code, 1);
    let (code, _) = run_code(&["train"]); // missing required flags
    assert_eq!(code, 1);
}

#[test]
fn gen_data_is_deterministic_and_headers_match_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        run_ok(&[
            "gen-data",
            "--classes",
            "sphere,cube",
            "--points",
            "64",
            "--train-per-class",
            "3",
            "--test-per-class",
            "2",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        dirs.push(out);
    }
    for file in ["manifest.toml", "train.pcds", "test.pcds"] {
        let a = std::fs::read(dirs[0].join(file)).unwrap();
        let b = std::fs::read(dirs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} must be byte-identical across same-seed runs");
    }
    let ds = read_dataset(&dirs[0]).unwrap();
    assert_eq!(ds.class_names, vec!["sphere", "cube"]);
    assert_eq!(ds.points_per_cloud, 64);
    assert_eq!(ds.train.len(), 6);
    assert_eq!(ds.test.len(), 4);
}

#[test]
fn gen_data_unwritable_path_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let out = file.join("sub"); // path through a regular file
    let (code, stderr) = run_code(&[
        "gen-data",
        "--train-per-class",
        "1",
        "--test-per-class",
        "1",
        "--points",
        "32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn train_zero_epochs_writes_init_checkpoint_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let out = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "tiny",
        "--epochs",
        "0",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("ckpt_tiny.t3dn").exists());
    assert!(read_metrics_csv(&out.join("metrics_tiny.csv")).unwrap().is_empty());
    let manifest = std::fs::read_to_string(out.join("run_manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"finished\""));
    assert!(manifest.contains("mode = \"tiny\""));
    assert!(manifest.contains("model_config_digest"));
}

#[test]
fn two_stage_training_produces_both_stage_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let teacher = tmp.path().join("teacher");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "teacher",
        "--epochs",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        teacher.to_str().unwrap(),
        "--quiet",
    ]);
    let teacher_ckpt = teacher.join("ckpt_teacher.t3dn");
    let before = std::fs::read(&teacher_ckpt).unwrap();

    let out = tmp.path().join("student");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "two-stage",
        "--epochs",
        "1",
        "--epochs2",
        "1",
        "--teacher",
        teacher_ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    for file in [
        "metrics_stage1.csv",
        "metrics_stage2.csv",
        "ckpt_stage1.t3dn",
        "ckpt_stage2.t3dn",
        "run_manifest.toml",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    // Consuming a teacher never mutates it.
    assert_eq!(before, std::fs::read(&teacher_ckpt).unwrap());
}

#[test]
fn repeated_training_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let mut files = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        run_ok(&[
            "train",
            "--config",
            model.to_str().unwrap(),
            "--mode",
            "netaug",
            "--epochs",
            "2",
            "--seed",
            "13",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        files.push((
            std::fs::read(out.join("metrics_stage1.csv")).unwrap(),
            std::fs::read(out.join("ckpt_stage1.t3dn")).unwrap(),
        ));
    }
    assert_eq!(files[0].0, files[1].0, "metrics CSVs must match byte for byte");
    assert_eq!(files[0].1, files[1].1, "checkpoints must match byte for byte");
}

#[test]
fn kd_without_teacher_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let (code, stderr) = run_code(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "kd",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("--teacher"), "stderr: {stderr}");
}

#[test]
fn corrupted_dataset_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    // Stomp the split file's magic.
    let split = data.join("train.pcds");
    let mut bytes = std::fs::read(&split).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&split, &bytes).unwrap();
    let (code, stderr) = run_code(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "tiny",
        "--epochs",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn corrupted_checkpoint_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let bogus = tmp.path().join("bogus.t3dn");
    std::fs::write(&bogus, b"not a checkpoint at all").unwrap();
    let (code, stderr) = run_code(&[
        "eval",
        "--config",
        model.to_str().unwrap(),
        "--checkpoint",
        bogus.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code, 4, "stderr: {stderr}");
}

#[test]
fn eval_reports_accuracy_for_a_trained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let out = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "tiny",
        "--epochs",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let output = run_ok(&[
        "eval",
        "--config",
        model.to_str().unwrap(),
        "--checkpoint",
        out.join("ckpt_tiny.t3dn").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("oa="), "stdout: {stdout}");
    assert!(stdout.contains("selection=tiny"), "stdout: {stdout}");
}

#[test]
fn end2end_warmup_rows_log_alpha_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let out = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "end2end",
        "--epochs",
        "2",
        "--warmup",
        "100",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let rows = read_metrics_csv(&out.join("metrics_end2end.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.alpha == 0.0));
}

#[test]
fn report_emits_cost_table_and_delta_columns() {
    let output = run_ok(&["report", "--preset", "canonical"]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("1.747M"), "stdout: {stdout}");
    assert!(stdout.contains("0.030M"), "stdout: {stdout}");
    assert!(stdout.contains("7.887G"), "stdout: {stdout}");
    assert!(!stdout.contains("OA (%)"));

    // With metrics attached, OA and ΔAcc columns appear.
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "tiny",
        "--epochs",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--quiet",
    ]);
    let csv_arg = format!(
        "tiny=1/4={}",
        run_dir.join("metrics_tiny.csv").to_str().unwrap()
    );
    let output = run_ok(&[
        "report",
        "--config",
        model.to_str().unwrap(),
        "--points",
        "32",
        "--csv",
        &csv_arg,
        "--baseline",
        "tiny",
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("OA (%)"), "stdout: {stdout}");
    assert!(stdout.contains("ΔAcc vs tiny"), "stdout: {stdout}");

    // Machine-readable variant.
    let table = tmp.path().join("table.csv");
    run_ok(&[
        "report",
        "--config",
        model.to_str().unwrap(),
        "--points",
        "32",
        "--csv",
        &csv_arg,
        "--format",
        "csv",
        "--out",
        table.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("label,scale,params,flops,oa"));
}

#[test]
fn mode_sweep_aggregates_all_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let model = write_small_model(tmp.path());
    let data = gen_small_data(tmp.path());
    let teacher = tmp.path().join("teacher");
    run_ok(&[
        "train",
        "--config",
        model.to_str().unwrap(),
        "--mode",
        "teacher",
        "--epochs",
        "1",
        "--data",
        data.to_str().unwrap(),
        "--out",
        teacher.to_str().unwrap(),
        "--quiet",
    ]);
    let out = tmp.path().join("sweep");
    let output = run_ok(&[
        "sweep",
        "--sweep",
        "mode",
        "--config",
        model.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--epochs2",
        "1",
        "--warmup",
        "0",
        "--teacher",
        teacher.join("ckpt_teacher.t3dn").to_str().unwrap(),
        "--quiet",
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    for label in ["tiny", "netaug", "kd", "two-stage", "hint", "mutual", "end2end"] {
        assert!(stdout.contains(&format!("| {label} |")), "missing row {label}:\n{stdout}");
    }
    // Single seed: no ± std column.
    assert!(!stdout.contains("± std"));
    assert!(out.join("sweep_mode.md").exists());
    assert!(out.join("sweep_mode.csv").exists());
}
