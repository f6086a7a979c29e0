use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pgattack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgattack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, count: &str) -> String {
    let out = pgattack(&["synth", "--out", dir.to_str().unwrap(), "--count", count, "--size", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

const QUICK: [&str; 6] = ["--steps-t", "5", "--steps-n", "1", "--text-size", "8"];

#[test]
fn attack_then_score() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "2");
    let out = tmp.path().join("adv");
    let mut args = vec!["attack", "--manifest", &manifest, "--out", out.to_str().unwrap(), "--eps", "8/255"];
    args.extend(QUICK);
    let run = pgattack(&args);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["pmp"]["eps"].as_f64(), Some(8.0 / 255.0));
    assert!(out.join("scene_0000.png").exists());

    let score_file = tmp.path().join("score.json");
    let score = pgattack(&[
        "score",
        "--manifest",
        &manifest,
        "--adv-dir",
        out.to_str().unwrap(),
        "--out",
        score_file.to_str().unwrap(),
    ]);
    assert_eq!(score.status.code(), Some(0), "{}", String::from_utf8_lossy(&score.stderr));
    let rescored: serde_json::Value = serde_json::from_str(&fs::read_to_string(score_file).unwrap()).unwrap();
    assert_eq!(rescored["final_score"], report["score"]["final_score"]);
}

#[test]
fn partial_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "2");
    fs::remove_file(tmp.path().join("data/scene_0001.png")).unwrap();
    let out = tmp.path().join("adv");
    let mut args = vec!["attack", "--manifest", &manifest, "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    assert_eq!(pgattack(&args).status.code(), Some(2));
}

#[test]
fn fatal_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "1");
    let out = tmp.path().join("adv");
    let out = out.to_str().unwrap();
    let missing = pgattack(&["attack", "--manifest", "/no/such/manifest.jsonl", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("manifest.jsonl"));
    let no_phase = pgattack(&["attack", "--manifest", &manifest, "--out", out, "--phases", ""]);
    assert_eq!(no_phase.status.code(), Some(1));
    let bad_eps = pgattack(&["attack", "--manifest", &manifest, "--out", out, "--eps", "lots"]);
    assert_ne!(bad_eps.status.code(), Some(0));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), "1");
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--axis",
        "text-quantity",
        "--values",
        "0,3",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(QUICK);
    let run = pgattack(&args);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let table = String::from_utf8(run.stdout).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(out.join("text_quantity_1/report.json").exists());
}

#[test]
fn exported_weights_and_font_load_back() {
    let tmp = tempfile::tempdir().unwrap();
    let weights = tmp.path().join("w.bin");
    let font = tmp.path().join("f.bin");
    assert!(pgattack(&["export-weights", "--seed", "5", "--out", weights.to_str().unwrap()]).status.success());
    assert!(pgattack(&["export-font", "--out", font.to_str().unwrap()]).status.success());
    let loaded = pgattack::model::load_snapshot(&weights).unwrap();
    assert_eq!(loaded.image_projection().len(), pgattack::init_model(5).image_projection().len());
    assert!(pgattack::font::GlyphFont::load(&font).is_ok());
}
