use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mwcnn::eeg_io::{write_events_csv, write_raw_matrix};
use mwcnn::metrics::dump_window_csv;
use mwcnn::model::{build_arch, save_params, ModelParams};
use mwcnn::preprocess::{load_dataset, save_dataset};
use mwcnn::synthetic::{burst_dataset, session, BurstConfig};
use mwcnn::train::make_folds;
use serde_json::json;

fn mwcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mwcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

/// One 120 s, 4-channel, 128 Hz session with presses at 30, 60 and 90 s.
fn recording_fixture(dir: &Path) -> serde_json::Value {
    let (rec, events) = session(4, 128.0, 120.0, &[30.0, 60.0, 90.0], 1, 1, 5).unwrap();
    write_raw_matrix(&rec, dir.join("s1.mwer")).unwrap();
    write_events_csv(&events, dir.join("s1_events.csv")).unwrap();
    json!({
        "recordings": [{"path": "s1.mwer", "events": "s1_events.csv", "subject_id": 1, "session_id": 1}],
        "dataset": "out/ds.mwds",
        "window_seconds": 2,
        "seed": 3
    })
}

fn prepared(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "prep.json", recording_fixture(dir));
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("out/ds.mwds")
}

#[test]
fn prepare_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "prep.json", recording_fixture(dir.path()));
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("MW: 3, FS: 3"), "{}", stdout(&o));
    assert!(stdout(&o).contains("skipped presses: 0"));
    let first = std::fs::read(dir.path().join("out/ds.mwds")).unwrap();
    let ds = load_dataset(dir.path().join("out/ds.mwds")).unwrap();
    assert_eq!(ds.class_counts(), (3, 3));
    assert_eq!(ds.n_timesteps, 256);

    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("out/ds.mwds")).unwrap(), first);

    // --out redirects the dataset
    let alt = dir.path().join("alt");
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap(), "--out", alt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(alt.join("dataset.mwds")).unwrap(), first);
}

#[test]
fn prepare_missing_events_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = recording_fixture(dir.path());
    v["recordings"][0]["events"] = json!("nowhere_events.csv");
    let cfg = write_config(dir.path(), "prep.json", v);
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere_events.csv"), "{}", stderr(&o));
}

#[test]
fn bad_config_and_window_length_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", json!({"epochz": 3}));
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), "prep.json", recording_fixture(dir.path()));
    let o = mwcnn(&["prepare", "--config", cfg.to_str().unwrap(), "--window-seconds", "4"]);
    assert_eq!(o.status.code(), Some(2));

    let o = mwcnn(&["prepare", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_weights_predict_fs_at_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = prepared(dir.path());
    let arch = build_arch(2, 128.0, 4, 20).unwrap();
    save_params(&ModelParams::<f32>::zeros(&arch).unwrap(), dir.path().join("zero.mwnw")).unwrap();

    let cfg = write_config(dir.path(), "pred.json", json!({"weights": "zero.mwnw", "windows": "out/ds.mwds"}));
    let o = mwcnn(&["predict", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<_> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().all(|l| l == "FS p=0.50000"), "{lines:?}");

    let ds = load_dataset(&ds_path).unwrap();
    let labels: Vec<String> = (1..=4).map(|i| format!("EEG{i}")).collect();
    dump_window_csv(&ds.samples[0].data, &labels, dir.path().join("w.csv")).unwrap();
    let cfg = write_config(
        dir.path(),
        "pred_csv.json",
        json!({"weights": "zero.mwnw", "windows": "w.csv", "window_seconds": 2}),
    );
    let o = mwcnn(&["predict", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "FS p=0.50000");
}

#[test]
fn predict_rejects_foreign_weights_and_bad_windows() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    // saved for a 10-map network, configured for 20
    let other = build_arch(2, 128.0, 4, 10).unwrap();
    save_params(&ModelParams::<f32>::zeros(&other).unwrap(), dir.path().join("other.mwnw")).unwrap();
    let cfg = write_config(dir.path(), "pred.json", json!({"weights": "other.mwnw", "windows": "out/ds.mwds"}));
    let o = mwcnn(&["predict", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("fingerprint"));

    let arch = build_arch(2, 128.0, 4, 20).unwrap();
    save_params(&ModelParams::<f32>::zeros(&arch).unwrap(), dir.path().join("zero.mwnw")).unwrap();
    std::fs::write(dir.path().join("bad.csv"), "channel,0,1\nEEG1,0.5,oops\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "pred_bad.json",
        json!({"weights": "zero.mwnw", "windows": "bad.csv", "window_seconds": 2}),
    );
    let o = mwcnn(&["predict", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    std::fs::write(dir.path().join("junk.mwds"), b"not a dataset").unwrap();
    let cfg = write_config(dir.path(), "pred_junk.json", json!({"weights": "zero.mwnw", "windows": "junk.mwds"}));
    let o = mwcnn(&["predict", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_hooks_fail() {
    let o = mwcnn(&["verify"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS ")).count(), 23);
    assert!(out.contains("23/23 checks passed"));

    let o = mwcnn(&["verify", "--inject-floor-pooling"]);
    assert_eq!(o.status.code(), Some(1));
    let row5 = stdout(&o).lines().find(|l| l.contains("layer shape row 5")).unwrap().to_owned();
    assert!(row5.starts_with("FAIL") && row5.contains("1021"), "{row5}");

    let o = mwcnn(&["verify", "--inject-conv-grad-offset", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL gradient conv")));
    assert!(stderr(&o).contains("gradient conv"));
}

fn toy_dataset(dir: &Path, name: &str, n_timesteps: usize, n_samples: usize) -> PathBuf {
    let cfg = BurstConfig {
        n_samples,
        n_timesteps,
        ..BurstConfig::default()
    };
    let p = dir.join(name);
    save_dataset(&burst_dataset(&cfg, 11).unwrap(), &p).unwrap();
    p
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn cv_training_writes_weights_history_report() {
    let dir = tempfile::tempdir().unwrap();
    toy_dataset(dir.path(), "toy.mwds", 256, 100);
    let cfg = write_config(
        dir.path(),
        "train.json",
        json!({"dataset": "toy.mwds", "experiment": "cv", "seed": 7,
               "train": {"epochs": 8, "batch_size": 8}}),
    );
    let out_dir = dir.path().join("run");
    let o = mwcnn(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("pooled: tp"));
    for r in 0..10 {
        assert!(out_dir.join(format!("weights_rep{r:02}.mwnw")).is_file());
    }
    let report = csv_rows(&out_dir.join("report.csv"));
    assert_eq!(report.len(), 11);
    assert_eq!(report[10][0], "pooled");
    let pooled: u64 = report[10][1..5].iter().map(|s| s.parse::<u64>().unwrap()).sum();
    assert_eq!(pooled, 100);
    assert_eq!(csv_rows(&out_dir.join("history.csv")).len(), 10 * 8);

    // repetition 0's model should reproduce the labels of its own training windows
    let ds = load_dataset(dir.path().join("toy.mwds")).unwrap();
    let plan = &make_folds(&ds.labels(), 10, 7).unwrap()[0];
    let first = plan.train[0];
    let labels: Vec<String> = (1..=8).map(|i| format!("EEG{i}")).collect();
    dump_window_csv(&ds.samples[first].data, &labels, dir.path().join("own.csv")).unwrap();
    let pcfg = write_config(
        dir.path(),
        "pred.json",
        json!({"weights": "run/weights_rep00.mwnw", "windows": "own.csv", "window_seconds": 2}),
    );
    let o = mwcnn(&["predict", "--config", pcfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let want = ds.samples[first].label.name();
    assert!(stdout(&o).starts_with(&format!("{want} p=")), "{} vs {want}", stdout(&o));

    let pcfg = write_config(
        dir.path(),
        "pred_all.json",
        json!({"weights": "run/weights_rep00.mwnw", "windows": "toy.mwds"}),
    );
    let o = mwcnn(&["predict", "--config", pcfg.to_str().unwrap()]);
    let predicted: Vec<String> = stdout(&o).lines().map(|l| l.split(' ').next().unwrap().to_owned()).collect();
    let agree = plan
        .train
        .iter()
        .filter(|&&i| predicted[i] == ds.samples[i].label.name())
        .count();
    assert!(agree * 100 >= plan.train.len() * 95, "{agree}/{}", plan.train.len());

    // identical seed, identical weights
    let again = dir.path().join("again");
    let o = mwcnn(&["train", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(out_dir.join("weights_rep03.mwnw")).unwrap(),
        std::fs::read(again.join("weights_rep03.mwnw")).unwrap()
    );
    assert_eq!(
        std::fs::read(out_dir.join("report.csv")).unwrap(),
        std::fs::read(again.join("report.csv")).unwrap()
    );
}

#[test]
fn cross_subject_and_window_length_tables() {
    let dir = tempfile::tempdir().unwrap();
    toy_dataset(dir.path(), "w2.mwds", 256, 40);
    toy_dataset(dir.path(), "w5.mwds", 640, 20);
    toy_dataset(dir.path(), "w8.mwds", 1024, 20);

    let cfg = write_config(
        dir.path(),
        "xs.json",
        json!({"dataset": "w2.mwds", "experiment": "cross_subject", "reports": "xs",
               "train": {"epochs": 1, "batch_size": 8}}),
    );
    let o = mwcnn(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("xs/report.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["run1", "run2", "run3"]);
    // runs 1 and 2 test on the whole other subject
    let tested = |r: &Vec<String>| r[1..5].iter().map(|s| s.parse::<u64>().unwrap()).sum::<u64>();
    assert_eq!(tested(&rows[0]), 20);
    assert_eq!(tested(&rows[1]), 20);
    assert_eq!(tested(&rows[2]), 20);
    assert!(dir.path().join("xs/weights_run3.mwnw").is_file());

    let cfg = write_config(
        dir.path(),
        "wl.json",
        json!({"datasets": ["w2.mwds", "w5.mwds", "w8.mwds"], "reports": "wl",
               "train": {"epochs": 1, "batch_size": 8}}),
    );
    let o = mwcnn(&["train", "--config", cfg.to_str().unwrap(), "--experiment", "window_lengths"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("wl/report.csv"));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["2s", "5s", "8s"]);
    assert!(dir.path().join("wl/8s_weights_rep09.mwnw").is_file());
    assert!(dir.path().join("wl/5s_history.csv").is_file());
}

#[test]
fn train_missing_dataset_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", json!({"dataset": "gone.mwds"}));
    let o = mwcnn(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gone.mwds"));
}
