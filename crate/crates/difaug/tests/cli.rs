//! End-to-end tests of the command-line binary: exit codes, byte-identical
//! reruns, and resume behavior, all through the public interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_difaug"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn difaug")
}

fn assert_code(out: &Output, code: i32, ctx: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{ctx}: stdout={} stderr={}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small config: fast enough for CI, large enough to exercise every phase,
/// probes, and checkpoints.
fn smoke_config(dir: &Path, out_dir: &str, augment_enabled: bool) -> PathBuf {
    let text = format!(
        r#"{{
  "dataset": {{"patch_size": 32, "count": 10}},
  "augment": {{"enabled": {augment_enabled}}},
  "train": {{
    "pretrain": {{"total_iters": 6, "calib_probe_interval": 3, "calib_probe_crops": 16, "batch_size": 2}},
    "adversarial": {{"total_iters": 6, "calib_probe_interval": 3, "calib_probe_crops": 16, "batch_size": 2}}
  }},
  "output": {{"dir": "{out_dir}"}}
}}
"#
    );
    let path = dir.join("cfg.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn file_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn help_covers_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert_code(&out, 0, "--help");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for sub in ["gen-data", "train", "eval-calib", "augment-demo", "compare"] {
        assert!(text.contains(sub), "--help missing {sub}: {text}");
        let sub_out = bin().args([sub, "--help"]).output().unwrap();
        assert_code(&sub_out, 0, &format!("{sub} --help"));
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["train", "--no-such-flag"]).output().unwrap();
    assert_code(&out, 2, "unknown flag");
}

#[test]
fn gen_data_is_byte_identical_and_guards_overwrite() {
    let tmp = TempDir::new().unwrap();
    let cfg = smoke_config(tmp.path(), "run", true);
    let cfg = cfg.to_str().unwrap();
    let out1 = run(&["gen-data", "--config", cfg, "--out", "data"], tmp.path());
    assert_code(&out1, 0, "first gen-data");
    let manifest = file_bytes(&tmp.path().join("data/manifest.json"));
    let hr0 = file_bytes(&tmp.path().join("data/hr_0000.png"));
    let lr9 = file_bytes(&tmp.path().join("data/lr_0009.png"));

    // Non-empty target without --force is refused with the usage exit code.
    let refused = run(&["gen-data", "--config", cfg, "--out", "data"], tmp.path());
    assert_code(&refused, 2, "overwrite without --force");

    let out2 = run(&["gen-data", "--config", cfg, "--out", "data", "--force"], tmp.path());
    assert_code(&out2, 0, "forced rerun");
    assert_eq!(manifest, file_bytes(&tmp.path().join("data/manifest.json")));
    assert_eq!(hr0, file_bytes(&tmp.path().join("data/hr_0000.png")));
    assert_eq!(lr9, file_bytes(&tmp.path().join("data/lr_0009.png")));
}

#[test]
fn bad_config_exits_2_and_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"datset": {}}"#).unwrap();
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "d"], tmp.path());
    assert_code(&out, 2, "unknown config key");
    assert!(String::from_utf8_lossy(&out.stderr).contains("datset"));
}

#[test]
fn missing_config_file_exits_4() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["gen-data", "--config", "nope.json", "--out", "d"], tmp.path());
    assert_code(&out, 4, "missing config file");
}

#[test]
fn train_rerun_and_resume_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = smoke_config(tmp.path(), "runA", true);
    let cfg = cfg.to_str().unwrap();

    let out = run(&["train", "--config", cfg, "--quiet"], tmp.path());
    assert_code(&out, 0, "train A");
    let run_a = tmp.path().join("runA");
    let history = file_bytes(&run_a.join("history.csv"));
    let gen_params = file_bytes(&run_a.join("ckpt_11/gen.params"));
    let records = file_bytes(&run_a.join("records_11.csv"));

    // Fresh rerun of the same config reproduces every artifact byte for byte.
    let out = run(&["train", "--config", cfg, "--out", "runA2", "--quiet"], tmp.path());
    assert_code(&out, 0, "train A2");
    let run_a2 = tmp.path().join("runA2");
    assert_eq!(history, file_bytes(&run_a2.join("history.csv")));
    assert_eq!(gen_params, file_bytes(&run_a2.join("ckpt_11/gen.params")));
    assert_eq!(records, file_bytes(&run_a2.join("records_11.csv")));

    // Resuming from a mid-run checkpoint reproduces the same tail.
    std::fs::create_dir_all(tmp.path().join("runA3")).unwrap();
    for name in ["ckpt_8", "history.csv"] {
        copy_recursive(&run_a.join(name), &tmp.path().join("runA3").join(name));
    }
    let ckpt = run_a.join("ckpt_8");
    let out = run(
        &["train", "--config", cfg, "--out", "runA3", "--resume", ckpt.to_str().unwrap(), "--quiet"],
        tmp.path(),
    );
    assert_code(&out, 0, "resumed train");
    let run_a3 = tmp.path().join("runA3");
    assert_eq!(history, file_bytes(&run_a3.join("history.csv")));
    assert_eq!(gen_params, file_bytes(&run_a3.join("ckpt_11/gen.params")));
}

fn copy_recursive(src: &Path, dst: &Path) {
    if src.is_dir() {
        std::fs::create_dir_all(dst).unwrap();
        for entry in std::fs::read_dir(src).unwrap() {
            let entry = entry.unwrap();
            copy_recursive(&entry.path(), &dst.join(entry.file_name()));
        }
    } else {
        std::fs::copy(src, dst).unwrap();
    }
}

#[test]
fn eval_calib_hand_case_prints_expected_ece() {
    let tmp = TempDir::new().unwrap();
    // With two bins, this four-record case has a known calibration error of 0.1125.
    let records = difaug::calib::records_to_csv(&difaug::calib::hand_case_records());
    let path = tmp.path().join("records.csv");
    std::fs::write(&path, records).unwrap();
    let out = run(
        &["eval-calib", "--records", path.to_str().unwrap(), "--bins", "2", "--out", "cal"],
        tmp.path(),
    );
    assert_code(&out, 0, "eval-calib records");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ece 0.1125"), "stdout: {stdout}");
    assert!(tmp.path().join("cal/calib_eval.csv").exists());
    assert!(tmp.path().join("cal/calib_eval.svg").exists());
}

#[test]
fn eval_calib_rejects_malformed_csv_with_line_number() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.csv");
    std::fs::write(&path, "logit,label\n1.0,real\noops,fake\n").unwrap();
    let out = run(&["eval-calib", "--records", path.to_str().unwrap()], tmp.path());
    assert_code(&out, 2, "malformed records");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('3'), "should name line 3: {stderr}");
}

#[test]
fn eval_calib_requires_exactly_one_source() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["eval-calib"], tmp.path());
    assert_code(&out, 2, "no source");
    let out = run(&["eval-calib", "--checkpoint", "x"], tmp.path());
    assert_code(&out, 2, "checkpoint without dataset");
    let out = run(&["eval-calib", "--records", "r.csv", "--checkpoint", "x", "--dataset", "d"], tmp.path());
    assert_code(&out, 2, "both sources");
}

#[test]
fn augment_demo_writes_grid_and_requires_lr() {
    let tmp = TempDir::new().unwrap();
    let cfg = smoke_config(tmp.path(), "run", true);
    let cfg = cfg.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", cfg, "--out", "data"], tmp.path()), 0, "gen-data");

    let out = run(
        &[
            "augment-demo",
            "--image", "data/hr_0000.png",
            "--lr-image", "data/lr_0000.png",
            "--out", "grid.png",
        ],
        tmp.path(),
    );
    assert_code(&out, 0, "augment-demo");
    let grid = image::open(tmp.path().join("grid.png")).unwrap();
    // 2 rows x 5 tiles of the 32x32 input.
    assert_eq!((grid.width(), grid.height()), (160, 64));

    let out = run(&["augment-demo", "--image", "data/hr_0000.png", "--out", "g.png"], tmp.path());
    assert_code(&out, 2, "missing --lr-image");
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr-image"));
}

#[test]
fn compare_joins_runs_and_rejects_mismatched_probes() {
    let tmp = TempDir::new().unwrap();
    let cfg_a = smoke_config(tmp.path(), "runA", true);
    let out = run(&["train", "--config", cfg_a.to_str().unwrap(), "--quiet"], tmp.path());
    assert_code(&out, 0, "train A");
    let cfg_b = {
        let p = tmp.path().join("cfgB.json");
        let text = std::fs::read_to_string(&cfg_a)
            .unwrap()
            .replace("\"enabled\": true", "\"enabled\": false")
            .replace("runA", "runB");
        std::fs::write(&p, text).unwrap();
        p
    };
    let out = run(&["train", "--config", cfg_b.to_str().unwrap(), "--quiet"], tmp.path());
    assert_code(&out, 0, "train B");

    let out = run(&["compare", "--run-a", "runA", "--run-b", "runB", "--out", "cmp"], tmp.path());
    assert_code(&out, 0, "compare");
    let md = std::fs::read_to_string(tmp.path().join("cmp/compare.md")).unwrap();
    assert!(md.contains("final PSNR"), "{md}");
    assert!(md.contains("final ECE"), "{md}");
    let csv = std::fs::read_to_string(tmp.path().join("cmp/compare.csv")).unwrap();
    assert!(csv.starts_with("iter,psnr_a"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + 4, "one row per probe iteration");

    // Different probe grid: drop one probe row from run B's history.
    let hist_path = tmp.path().join("runB/history.csv");
    let hist = std::fs::read_to_string(&hist_path).unwrap();
    let trimmed: Vec<&str> = hist.lines().collect();
    std::fs::write(&hist_path, trimmed[..trimmed.len() - 1].join("\n") + "\n").unwrap();
    let out = run(&["compare", "--run-a", "runA", "--run-b", "runB", "--out", "cmp2"], tmp.path());
    assert_code(&out, 2, "mismatched probe grids");
    assert!(String::from_utf8_lossy(&out.stderr).contains("probe intervals differ"));
}
