use std::path::{Path, PathBuf};

use anyhow::Context;
use mwcnn::eeg_io::{read_bdf, read_events_csv, read_raw_matrix, EegRecording};
use mwcnn::metrics::{export_history, export_report, metrics, read_window_csv, ReportRow};
use mwcnn::model::{build_arch, load_params, pooling_for, predict as classify, save_params, ArchSpec};
use mwcnn::preprocess::{build_dataset, load_dataset, save_dataset, Dataset, PrepareOptions, RecordingSource, SessionInput};
use mwcnn::train::{run_cross_subject, run_cv, CvOutcome, TrainConfig};
use mwcnn::verify::{run_checks, VerifyHooks};
use mwcnn::Tensor;

use crate::config::{ensure_dir, require, require_exists, Experiment, RunConfig};
use crate::InputError;

struct FileRecording {
    path: PathBuf,
    subject_id: u8,
    session_id: u16,
}

impl RecordingSource for FileRecording {
    fn load(&self) -> mwcnn::Result<EegRecording> {
        let is_bdf = self
            .path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("bdf"));
        let mut rec = if is_bdf {
            read_bdf(&self.path)?
        } else {
            read_raw_matrix(&self.path)?
        };
        rec.subject_id = self.subject_id;
        rec.session_id = self.session_id;
        Ok(rec)
    }
}

pub fn prepare(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    cfg.check_window_seconds()?;
    if cfg.recordings.is_empty() {
        return Err(InputError("config lists no recordings".into()).into());
    }
    let target = match out {
        Some(dir) => dir.join("dataset.mwds"),
        None => require("dataset", &cfg.dataset)?.to_path_buf(),
    };
    let mut sources = Vec::with_capacity(cfg.recordings.len());
    let mut events = Vec::with_capacity(cfg.recordings.len());
    for r in &cfg.recordings {
        require_exists("recording", &r.path)?;
        require_exists("events file", &r.events)?;
        events.push(read_events_csv(&r.events)?);
        sources.push(FileRecording {
            path: r.path.clone(),
            subject_id: r.subject_id,
            session_id: r.session_id,
        });
    }
    let sessions: Vec<SessionInput<'_>> = sources
        .iter()
        .zip(events)
        .map(|(s, ev)| SessionInput { source: s, events: ev })
        .collect();
    let opts = PrepareOptions {
        window_seconds: cfg.window_seconds,
        seed: cfg.seed,
        filter: cfg.filter_settings(),
        zscore_scope: cfg.zscore_scope,
    };
    let (ds, report) = build_dataset(&sessions, &opts)?;
    if let Some(dir) = target.parent() {
        ensure_dir(dir)?;
    }
    save_dataset(&ds, &target)?;
    let (mw, fs) = report.totals();
    println!("MW: {mw}, FS: {fs}");
    for (subject, (m, f)) in &report.per_subject {
        println!("subject {subject}: MW {m}, FS {f}");
    }
    println!("skipped presses: {}", report.skipped_presses);
    println!("wrote {}", target.display());
    Ok(())
}

/// The network for a dataset's window length, rate and montage.
fn arch_for(ds: &Dataset, n_maps: usize, dropout: f64) -> anyhow::Result<ArchSpec> {
    let secs = ds.window_seconds();
    let w = secs.round() as u32;
    if (secs - f64::from(w)).abs() > 1e-9 || pooling_for(w).is_none() {
        return Err(InputError(format!("dataset windows are {secs} s long; only 2, 5 and 8 s are supported")).into());
    }
    let arch = build_arch(w, ds.sampling_rate, ds.n_channels, n_maps)?.with_dropout(dropout)?;
    Ok(arch)
}

fn load_input_dataset(p: &Path) -> anyhow::Result<Dataset> {
    require_exists("dataset", p)?;
    Ok(load_dataset(p)?)
}

fn print_row(row: &ReportRow) -> anyhow::Result<()> {
    let c = row.counts;
    println!(
        "{}: tp {} tn {} fp {} fn {}  {}",
        row.experiment,
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        metrics(&c)?
    );
    Ok(())
}

fn write_cv(outcome: &CvOutcome, dir: &Path, prefix: &str) -> anyhow::Result<Vec<ReportRow>> {
    for (r, rep) in outcome.repetitions.iter().enumerate() {
        save_params(&rep.params, dir.join(format!("{prefix}weights_rep{r:02}.mwnw")))?;
    }
    let histories: Vec<_> = outcome.repetitions.iter().map(|r| r.history.clone()).collect();
    export_history(&histories, dir.join(format!("{prefix}history.csv")))?;
    Ok(outcome
        .repetitions
        .iter()
        .enumerate()
        .map(|(r, rep)| ReportRow {
            experiment: format!("{prefix}rep{r:02}"),
            counts: rep.counts,
        })
        .collect())
}

fn cv_on(path: &Path, cfg: &RunConfig, t: &TrainConfig) -> anyhow::Result<(u32, CvOutcome)> {
    let ds = load_input_dataset(path)?;
    let arch = arch_for(&ds, cfg.n_maps, t.dropout_rate)?;
    let w = ds.window_seconds().round() as u32;
    log::info!("{}: {} windows of {w} s", path.display(), ds.len());
    let out = run_cv(&ds, &arch, t).with_context(|| format!("cross-validation on {}", path.display()))?;
    Ok((w, out))
}

pub fn train(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let t = cfg.train_config()?;
    let dir = out.unwrap_or(&cfg.reports);
    let mut rows = Vec::new();
    match cfg.experiment {
        Experiment::Cv => {
            let path = require("dataset", &cfg.dataset)?;
            let (_, outcome) = cv_on(path, cfg, &t)?;
            ensure_dir(dir)?;
            rows = write_cv(&outcome, dir, "")?;
            rows.push(ReportRow {
                experiment: "pooled".into(),
                counts: outcome.pooled,
            });
        }
        Experiment::WindowLengths => {
            if cfg.datasets.is_empty() {
                return Err(InputError("config field `datasets` is required for window_lengths".into()).into());
            }
            cfg.datasets.iter().try_for_each(|p| require_exists("dataset", p))?;
            ensure_dir(dir)?;
            for path in &cfg.datasets {
                let (w, outcome) = cv_on(path, cfg, &t)?;
                write_cv(&outcome, dir, &format!("{w}s_"))?;
                rows.push(ReportRow {
                    experiment: format!("{w}s"),
                    counts: outcome.pooled,
                });
            }
        }
        Experiment::CrossSubject => {
            let path = require("dataset", &cfg.dataset)?;
            let ds = load_input_dataset(path)?;
            let arch = arch_for(&ds, cfg.n_maps, t.dropout_rate)?;
            ensure_dir(dir)?;
            let mut histories = Vec::new();
            for run in 1..=3u8 {
                let o = run_cross_subject(&ds, &arch, &t, run).with_context(|| format!("cross-subject run {run}"))?;
                save_params(&o.params, dir.join(format!("weights_run{run}.mwnw")))?;
                histories.push(o.history);
                rows.push(ReportRow {
                    experiment: format!("run{run}"),
                    counts: o.counts,
                });
            }
            export_history(&histories, dir.join("history.csv"))?;
        }
    }
    export_report(&rows, dir.join("report.csv"))?;
    for row in &rows {
        print_row(row)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> anyhow::Result<()> {
    let weights = require("weights", &cfg.weights)?;
    let source = require("windows", &cfg.windows)?;
    require_exists("weights", weights)?;
    require_exists("windows", source)?;
    let is_csv = source.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (windows, fs): (Vec<Tensor<f32>>, f64) = if is_csv {
        cfg.check_window_seconds()?;
        let (w, _) = read_window_csv(source)?;
        let fs = w.shape()[1] as f64 / f64::from(cfg.window_seconds);
        (vec![w], fs)
    } else {
        let ds = load_dataset(source)?;
        let fs = ds.sampling_rate;
        (ds.samples.into_iter().map(|s| s.data).collect(), fs)
    };
    let first = windows
        .first()
        .ok_or_else(|| InputError(format!("{} holds no windows", source.display())))?;
    let (c, n) = (first.shape()[0], first.shape()[1]);
    let secs = (n as f64 / fs).round() as u32;
    if pooling_for(secs).is_none() {
        return Err(InputError(format!("{n}-sample windows at {fs} Hz are not 2, 5 or 8 s long")).into());
    }
    let arch = build_arch(secs, fs, c, cfg.n_maps)?.with_dropout(cfg.train.dropout_rate)?;
    let params = load_params(weights, &arch)?;
    for w in &windows {
        let (label, probs) = classify(&params, w)?;
        println!("{} p={:.5}", label.name(), probs[label.index()]);
    }
    Ok(())
}

/// Prints one line per check; true when all passed.
pub fn verify(hooks: &VerifyHooks) -> bool {
    let results = run_checks(hooks);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    println!("{}/{} checks passed", results.len() - failed.len(), results.len());
    for r in &failed {
        eprintln!("failed: {} ({})", r.name, r.detail);
    }
    failed.is_empty()
}
