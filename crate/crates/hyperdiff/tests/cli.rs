//! CLI surface: subcommands, flag overrides, and exit codes, driven
//! through the built binary.

use std::path::Path;
use std::process::Command;

fn hyperdiff() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperdiff"))
}

fn write_config(path: &Path, dataset: &Path) {
    let cfg = format!(
        r#"{{
  "dataset": {:?},
  "seed": 3,
  "split": {{"mode": "ratio", "ratio": 0.15}},
  "schedule": {{"timesteps": 40, "beta_start": 1e-4, "beta_end": 0.02}},
  "ssdn": {{"patch_size": 4, "base_channels": 2, "time_embed_dim": 8}},
  "diffusion_train": {{"batch_size": 4, "learning_rate": 1e-3, "max_steps": 10, "checkpoint_every": 5}},
  "features": {{"timestamp": 5, "layer_index": 1, "pca_dim": 6}},
  "svit": {{"context": 2, "model_dim": 16, "heads": 4, "blocks": 2, "mlp_dim": 32, "dropout": 0.1}},
  "classifier_train": {{"learning_rate": 1e-3, "batch_size": 16, "epochs": 1}}
}}"#,
        dataset.display().to_string()
    );
    std::fs::write(path, cfg).unwrap();
}

#[test]
fn synth_ingest_and_pipeline_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cube_dir = tmp.path().join("cube");

    let out = hyperdiff()
        .args(["synth", "--dst"])
        .arg(&cube_dir)
        .args(["--height", "10", "--width", "10", "--bands", "8", "--classes", "2"])
        .args(["--seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("2 classes"), "{stdout}");

    // ingest: container -> container copy
    let copy_dir = tmp.path().join("copy");
    let out = hyperdiff()
        .args(["ingest", "--src"])
        .arg(&cube_dir)
        .arg("--dst")
        .arg(&copy_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(cube_dir.join("data.bin")).unwrap(),
        std::fs::read(copy_dir.join("data.bin")).unwrap()
    );

    let config = tmp.path().join("run.json");
    write_config(&config, &cube_dir);
    let out_dir = tmp.path().join("out");
    let out = hyperdiff()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("OA"));
    assert!(out_dir.join("eval.json").exists());
}

#[test]
fn csv_ingest_matches_source_values() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("cube.csv");
    let mut text = String::new();
    for r in 0..2 {
        for c in 0..2 {
            for b in 0..3 {
                text.push_str(&format!("{r},{c},{b},{}\n", (r + c * 2 + b * 4) as f32 * 0.25));
            }
        }
    }
    std::fs::write(&csv, text).unwrap();
    let labels = tmp.path().join("labels.csv");
    std::fs::write(&labels, "0,0,1\n1,1,2\n").unwrap();
    let dst = tmp.path().join("cube");
    let out = hyperdiff()
        .args(["ingest", "--src"])
        .arg(&csv)
        .arg("--labels")
        .arg(&labels)
        .arg("--dst")
        .arg(&dst)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (cube, labels, _) = hyperdiff::container::read_cube(&dst).unwrap();
    assert_eq!(cube.at(1, 1, 2), (1 + 1 * 2 + 2 * 4) as f32 * 0.25);
    assert_eq!(labels.at(0, 0), 1);
    assert_eq!(labels.at(1, 1), 2);
    assert_eq!(labels.at(0, 1), 0);
}

#[test]
fn duplicate_csv_cells_exit_with_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "0,0,0,1.0\n0,0,0,2.0\n").unwrap();
    let out = hyperdiff()
        .args(["ingest", "--src"])
        .arg(&csv)
        .arg("--dst")
        .arg(tmp.path().join("dst"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.json");
    std::fs::write(&config, r#"{"split": {"mode": "nope"}}"#).unwrap();
    let out = hyperdiff()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // unknown preset is also a config error
    let out = hyperdiff()
        .args(["synth", "--dst"])
        .arg(tmp.path().join("cube"))
        .args(["--preset", "medium"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cube_dir = tmp.path().join("cube");
    hyperdiff()
        .args(["synth", "--dst"])
        .arg(&cube_dir)
        .args(["--height", "10", "--width", "10", "--bands", "8", "--classes", "2", "--seed", "5"])
        .status()
        .unwrap();
    let config = tmp.path().join("run.json");
    write_config(&config, &cube_dir);

    // same config, two different --seed values: different checkpoints
    let run = |seed: &str, dir: &str| {
        let out_dir = tmp.path().join(dir);
        let out = hyperdiff()
            .args(["train-diffusion", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_dir)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("model.ckpt")).unwrap()
    };
    let a = run("3", "a"); // same as the file value
    let b = run("99", "b");
    let c = run("99", "c");
    assert_ne!(a, b, "different seeds must change the checkpoint");
    assert_eq!(b, c, "equal seeds must reproduce the checkpoint");
}
