use std::path::{Path, PathBuf};

use anyhow::Context;
use mwcnn::preprocess::dataset::FilterSettings;
use mwcnn::preprocess::ZScoreScope;
use mwcnn::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::InputError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Cv,
    CrossSubject,
    WindowLengths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingEntry {
    /// `.bdf` files are read as BDF, anything else as a raw MWER matrix.
    pub path: PathBuf,
    pub events: PathBuf,
    pub subject_id: u8,
    pub session_id: u16,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub n_taps: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let d = FilterSettings::default();
        Self {
            low_hz: d.low_hz,
            high_hz: d.high_hz,
            n_taps: d.n_taps,
        }
    }
}

fn default_filter() -> Option<FilterConfig> {
    Some(FilterConfig::default())
}

fn default_window_seconds() -> u32 {
    8
}

fn default_maps() -> usize {
    mwcnn::model::arch::DEFAULT_MAPS
}

fn default_reports() -> PathBuf {
    PathBuf::from("reports")
}

/// Everything a run needs. Relative paths are taken relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub recordings: Vec<RecordingEntry>,
    /// Output of `prepare`, input of `train`.
    pub dataset: Option<PathBuf>,
    /// One dataset per window length, for the window-length comparison.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    /// Input of `predict`.
    pub weights: Option<PathBuf>,
    /// Windows to classify: a window CSV or an MWDS dataset.
    pub windows: Option<PathBuf>,
    #[serde(default = "default_reports")]
    pub reports: PathBuf,
    #[serde(default = "default_window_seconds")]
    pub window_seconds: u32,
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_maps")]
    pub n_maps: usize,
    /// `null` disables bandpass filtering.
    #[serde(default = "default_filter")]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub zscore_scope: ZScoreScope,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub window_seconds: Option<u32>,
    pub experiment: Option<Experiment>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| InputError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for r in &mut self.recordings {
            fix(&mut r.path);
            fix(&mut r.events);
        }
        self.dataset.iter_mut().for_each(fix);
        self.datasets.iter_mut().for_each(fix);
        self.weights.iter_mut().for_each(fix);
        self.windows.iter_mut().for_each(fix);
        fix(&mut self.reports);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.window_seconds {
            self.window_seconds = w;
        }
        if let Some(e) = o.experiment {
            self.experiment = e;
        }
    }

    /// Training settings with the run seed in place.
    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let mut t = self.train.clone();
        if t.seed != 0 && t.seed != self.seed {
            log::warn!("train.seed {} is overridden by the run seed {}", t.seed, self.seed);
        }
        t.seed = self.seed;
        t.validate().map_err(|e| InputError(e.to_string()))?;
        Ok(t)
    }

    pub fn filter_settings(&self) -> Option<FilterSettings> {
        self.filter.as_ref().map(|f| FilterSettings {
            low_hz: f.low_hz,
            high_hz: f.high_hz,
            n_taps: f.n_taps,
        })
    }

    pub fn check_window_seconds(&self) -> anyhow::Result<()> {
        if ![2, 5, 8].contains(&self.window_seconds) {
            return Err(InputError(format!("window_seconds must be 2, 5 or 8, got {}", self.window_seconds)).into());
        }
        Ok(())
    }
}

pub fn require<'a>(field: &str, p: &'a Option<PathBuf>) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| InputError(format!("config field `{field}` is required for this command")).into())
}

pub fn require_exists(what: &str, p: &Path) -> anyhow::Result<()> {
    if !p.exists() {
        return Err(InputError(format!("{what} {} does not exist", p.display())).into());
    }
    Ok(())
}

pub fn ensure_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}
