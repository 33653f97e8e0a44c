//! From continuous recordings to a balanced, filtered, normalized window dataset.

pub mod dataset;
pub mod filter;
pub mod normalize;
pub mod windows;

pub use dataset::{
    build_dataset, load_dataset, save_dataset, Dataset, PrepareOptions, PrepareReport, RecordingSource,
    SessionInput,
};
pub use filter::{design_bandpass, filter_zero_phase, FilterKernel};
pub use normalize::{zscore, zscore_with, ZScoreScope};
pub use windows::{extract_fs_windows, extract_mw_windows, Label, MwExtraction, WindowSample};
