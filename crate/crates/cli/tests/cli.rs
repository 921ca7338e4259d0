use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use saccade_core::pipeline::ExperimentConfig;

fn saccade(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saccade"))
        .args(args)
        .env("SACCADE_OUTPUT_DIR", dir)
        .output()
        .expect("failed to launch saccade")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = saccade(dir, args);
    assert!(
        out.status.success(),
        "saccade {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(path: &Path) {
    let mut c = ExperimentConfig::desk();
    c.n_environments = 2;
    c.samples_per_field = 3000;
    c.saccades_per_env = 2000;
    c.search_trials = 10;
    c.search_environments = 1;
    fs::write(path, c.to_toml().unwrap()).unwrap();
}

#[test]
fn stepwise_stages_reproduce_run_all() {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("small.toml");
    small_config(&cfg);
    let cfg = cfg.to_str().unwrap();

    let all = work.path().join("all");
    ok(&all, &["--config", cfg, "run-all"]);

    let steps = work.path().join("steps");
    ok(&steps, &["--config", cfg, "gen-env"]);
    ok(&steps, &["--config", cfg, "learn-codebook"]);
    ok(&steps, &["--config", cfg, "explore", "--workers", "3"]);
    let summary = ok(&steps, &["--config", cfg, "estimate"]);
    assert!(summary.contains(&format!("records       {}", 4000 * 49 * 49)));
    ok(&steps, &["--config", cfg, "analyze-mi", "--entropy-dump", "--heatmap", "heatmaps"]);
    ok(&steps, &["--config", cfg, "search"]);
    ok(&steps, &["--config", cfg, "report"]);

    for f in ["encoders.bin", "codebook.bin", "model.bin", "mi.csv", "search.csv", "heatmaps/mi_q3.png", "gallery/gallery.csv"] {
        assert_eq!(
            fs::read(all.join(f)).unwrap(),
            fs::read(steps.join(f)).unwrap(),
            "{f} differs between run-all and stepwise stages"
        );
    }
    assert!(all.join("manifest.json").is_file());
}

#[test]
fn inspect_block_dumps_conditional_rows() {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("small.toml");
    small_config(&cfg);
    let cfg = cfg.to_str().unwrap();
    let dir = work.path().join("run");
    ok(&dir, &["--config", cfg, "run-all"]);
    let csv = ok(&dir, &["inspect-block", "--a", "24", "--b", "24", "--q", "0"]);
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("i,count,observed,p0"));
    assert_eq!(lines.count(), 60);

    let out = saccade(&dir, &["inspect-block", "--a", "49", "--b", "0", "--q", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `inspect-block`"));
}

#[test]
fn missing_artifact_fails_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let out = saccade(dir.path(), &["explore"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `explore` failed"), "{err}");
}

#[test]
fn mismatched_codebook_is_rejected() {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("small.toml");
    small_config(&cfg);
    let cfg = cfg.to_str().unwrap();
    let dir = work.path().join("run");
    ok(&dir, &["--config", cfg, "run-all"]);
    ok(&dir, &["--config", cfg, "--seed", "5", "learn-codebook", "--out", "other.bin", "--encoders-out", "other_enc.bin"]);
    let out = saccade(&dir, &["--config", cfg, "search", "--codebook", "other.bin", "--encoders", "other_enc.bin"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `search` failed") && err.contains("hash mismatch"), "{err}");
}

#[test]
fn noise_worlds_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(dir.path(), &["--preset", "noise", "run-all", "--print-config"]);
    let c = ExperimentConfig::from_toml(&printed).unwrap();
    assert_eq!(c.output_dir, dir.path());
    ok(dir.path(), &["gen-env", "--kind", "noise", "--count", "1", "--out", "noise"]);
    assert!(dir.path().join("noise/train00.png").is_file());
    let out = saccade(dir.path(), &["--preset", "huge", "gen-env"]);
    assert!(!out.status.success());
}
