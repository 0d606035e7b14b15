use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pupilkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pupilkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("PUPILKIT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_then_evaluate_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = pupilkit(dir.path(), &["synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = pupilkit(dir.path(), &["evaluate", "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.starts_with("# pupilkit evaluate v"));
    assert!(metrics.contains("seed=7"));
    for key in ["adm_corrected_r_mean", "adm_uncorrected_r_mean", "gbt_corrected_r2_mean"] {
        assert!(metrics.contains(key), "{key} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifests/evaluate.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());

    let o = pupilkit(dir.path(), &["report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pva = fs::read_to_string(dir.path().join("out/report/predicted_vs_actual.csv")).unwrap();
    assert!(pva.lines().nth(1).unwrap().starts_with("model,signal,participant_id,clip_id,predicted,actual"));
}

#[test]
fn calibrate_with_eight_samples_names_the_missing_point() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pupilkit.toml"), "[synth]\nn_participants = 3\nn_clips = 3\nframes_per_clip = 40\n").unwrap();
    let o = pupilkit(dir.path(), &["--config", "pupilkit.toml", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let cal = dir.path().join("study/calibration/P01.csv");
    let text = fs::read_to_string(&cal).unwrap();
    // the nine calibration frames minus full blue
    let wanted = ["0,0,0,", "50,0,0,", "100,0,0,", "0,50,0,", "0,100,0,", "0,0,50,", "50,50,50,", "100,100,100,"];
    let eight: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with('#') || l.starts_with("r,") || wanted.iter().any(|p| l.starts_with(p)))
        .collect();
    assert_eq!(eight.len(), 2 + 8, "{eight:?}");
    fs::write(&cal, eight.join("\n") + "\n").unwrap();

    let o = pupilkit(dir.path(), &["--config", "pupilkit.toml", "calibrate"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind="), "{err}");
    assert!(err.contains("(0,0,100)"), "{err}");
    assert!(!dir.path().join("out/models").exists(), "partial outputs left behind");
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = pupilkit(dir.path(), &["calibrate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kind=config"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.toml"), "[options]\nunknown = 1\n").unwrap();
    let o = pupilkit(dir.path(), &["--config", "bad.toml", "build-lut"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_lut_writes_header_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = pupilkit(dir.path(), &["build-lut"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lut = fs::read_to_string(dir.path().join("study/lut.txt")).unwrap();
    assert!(lut.starts_with("# pupilkit build-lut v"), "{}", &lut[..80]);
    assert!(dir.path().join("out/manifests/build-lut.json").exists());
}

#[test]
fn output_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pupilkit"))
        .arg("build-lut")
        .current_dir(dir.path())
        .env("PUPILKIT_OUTPUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("elsewhere/manifests/build-lut.json").exists());
}
