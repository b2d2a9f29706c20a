use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_goalcast"));
    c.env_remove("CTAF_GOALCAST_CACHE");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"
[scenario]
flights = 24

[window]
stride_s = 20.0

[model]
n_traj = 8
n_int = 4
k = 3
tcn = { channels = 8 }
mlp = { layers = 1, hidden = 16 }

[train]
lr0 = 3e-3
batch_size = 32
plateau_patience = 20
checkpoint_every = 0
"#;

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path
}

fn simulate(dir: &Path, cfg: &Path, seed: &str) -> PathBuf {
    let data = dir.join(format!("data{seed}"));
    let o = run(&["simulate", "--config", p(cfg), "--seed", seed, "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn wer_on_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.txt");
    fs::write(&f, "Butler traffic Skyhawk two three uniform left downwind runway eight\n").unwrap();
    let o = run(&["wer", p(&f), p(&f)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).trim(), "0.0");
}

#[test]
fn wer_counts_one_substitution() {
    let dir = tempfile::tempdir().unwrap();
    let (r, h) = (dir.path().join("r"), dir.path().join("h"));
    fs::write(&r, "alpha bravo charlie delta").unwrap();
    fs::write(&h, "alpha bravo charlie echo").unwrap();
    let out = dir.path().join("o");
    let o = run(&["wer", "--raw", p(&r), p(&h), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.25");
    assert_eq!(fs::read_to_string(out.join("wer.txt")).unwrap().trim(), "0.25");
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn eval_with_missing_checkpoint_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let o = run(&["eval", "--model", p(&dir.path().join("none.ckpt")), "--data", p(dir.path()), "--out", p(&out)]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.starts_with("goalcast: error kind=input_missing code=3: "), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["eval", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn bad_config_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let out = dir.path().join("o");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("kind=invalid_input"));
    assert!(!out.exists());
}

#[test]
fn unknown_scene_schema_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "3");
    let scenes = data.join("scenes.txt");
    let text = fs::read_to_string(&scenes).unwrap().replacen("schema=1", "schema=99", 1);
    fs::write(&scenes, text).unwrap();
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--epochs", "1", "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn checkpoint_schema_mismatch_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "3");
    let ckpt = dir.path().join("old.ckpt");
    fs::write(&ckpt, "goalcast-checkpoint schema=0\n").unwrap();
    let o = run(&["eval", "--model", p(&ckpt), "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "7");
    for f in ["airport.toml", "tracks.csv", "calls.jsonl", "directory.txt", "labeled_calls.csv", "scenes.txt", "manifest.json"]
    {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let model = dir.path().join("model");
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--epochs", "50", "--out", p(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(model.join("final.ckpt").is_file());
    assert_eq!(fs::read_to_string(model.join("history.csv")).unwrap().lines().count(), 51);

    let report = dir.path().join("report");
    let o = run(&[
        "eval",
        "--model",
        p(&model.join("final.ckpt")),
        "--data",
        p(&data),
        "--n",
        "10",
        "--seed",
        "1",
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(&report.join("summary.json"));
    let mean = summary["mean_fde_km"].as_f64().unwrap();
    assert!(mean.is_finite() && mean > 0.0, "mean FDE {mean}");
    assert_eq!(summary["n"], 10);

    let manifest = json(&report.join("manifest.json"));
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["seeds"]["eval"], 1);
    assert_eq!(manifest["config"]["eval"]["n"], 10);
    let outputs = manifest["outputs"].as_array().unwrap();
    let per_scene = fs::read(report.join("per_scene.csv")).unwrap();
    let digest = outputs.iter().find(|o| o["path"].as_str().unwrap().ends_with("per_scene.csv")).unwrap()["sha256"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(digest, hex::encode(Sha256::digest(&per_scene)));
}

#[test]
fn simulate_is_reproducible_from_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "5");
    let manifest = json(&data.join("manifest.json"));
    // Re-run with the resolved config alone; every output must match.
    let resolved = data.join("config.resolved.toml");
    let again = dir.path().join("again");
    let o = run(&["simulate", "--config", p(&resolved), "--out", p(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for out in manifest["outputs"].as_array().unwrap() {
        let name = Path::new(out["path"].as_str().unwrap()).file_name().unwrap();
        assert_eq!(fs::read(data.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn parse_reproduces_simulated_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "4");
    let out = dir.path().join("parsed");
    let o = run(&[
        "parse",
        "--calls",
        p(&data.join("calls.jsonl")),
        "--directory",
        p(&data.join("directory.txt")),
        "--tracks",
        p(&data.join("tracks.csv")),
        "--airport",
        p(&data.join("airport.toml")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(out.join("labeled_calls.csv")).unwrap(),
        fs::read_to_string(data.join("labeled_calls.csv")).unwrap()
    );
}

#[test]
fn context_lists_aircraft_in_the_air() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.csv");
    fs::write(&tracks, "time_s,aircraft_id,x_km,y_km,z_km\n0,N135PL,3.3,0,0.3\n10,N135PL,3.3,0.3,0.3\n0,N17NA,0,-5,0.3\n")
        .unwrap();
    let directory = dir.path().join("dir.txt");
    fs::write(&directory, "N135PL,Cherokee|Piper\nN17NA,Warrior\n").unwrap();
    let o = run(&["context", "--directory", p(&directory), "--tracks", p(&tracks), "--time", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("N135PL\nNames - Cherokee, Piper\nLocation - 2 miles, East"), "{text}");
    assert!(!text.contains("N17NA"), "{text}");
}

#[test]
fn pfi_and_sweep_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = simulate(dir.path(), &cfg, "8");
    let model = dir.path().join("m");
    let o = run(&["train", "--config", p(&cfg), "--data", p(&data), "--epochs", "3", "--out", p(&model)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = model.join("final.ckpt");

    let ab = dir.path().join("pfi");
    let o = run(&["ablate", "pfi", "--model", p(&ckpt), "--data", p(&data), "--reps", "4", "--out", p(&ab)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = json(&ab.join("ablation.json"));
    assert_eq!(report["repetitions"], 4);
    assert_eq!(report["deltas"].as_array().unwrap().len(), 4);

    let cache = dir.path().join("cache");
    let sw = dir.path().join("sweep");
    let args = [
        "sweep",
        "--config",
        p(&cfg),
        "--variable",
        "pred_horizon",
        "--values",
        "30,60",
        "--data",
        p(&data),
        "--epochs",
        "2",
        "--twin",
        "--format",
        "svg",
        "--out",
        p(&sw),
    ];
    let o = bin().args(args).env("CTAF_GOALCAST_CACHE", &cache).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(sw.join("sweep_pred_horizon.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("trajectory_only"));
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 2, "one cached split per horizon");
    let first = stdout(&o);
    let o = bin().args(args).env("CTAF_GOALCAST_CACHE", &cache).output().unwrap();
    assert_eq!(stdout(&o), first, "cached splits give the same curve");

    let ages = dir.path().join("ages");
    let o = run(&[
        "sweep", "--variable", "call_age_bucket", "--values", "0,60,600", "--model", p(&ckpt), "--data", p(&data),
        "--out", p(&ages),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(ages.join("sweep_call_age_bucket_model.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("value,mean_fde,q25,q75"));
    assert_eq!(csv.lines().count(), 3);
}
