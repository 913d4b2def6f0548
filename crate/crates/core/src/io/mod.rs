//! Datasets, model files, experiment configs and SVG output.

pub mod config;
pub mod dataset;
pub mod model;
pub mod svg;

pub use config::{AnalysisOptions, ExperimentConfig, NetSpec, UniversalTarget, OUTPUT_DIR_ENV};
pub use dataset::{gen_synthetic_2d, load_csv, load_idx, parse_csv, parse_idx, Dataset, DatasetSource, Layout};
pub use model::{load_model, load_model_file, save_model, ModelFile, MODEL_FORMAT_VERSION};
