//! Respiration-rate estimation from photoplethysmogram (PPG) recordings.
//!
//! The crate covers the whole offline pipeline: loading and windowing
//! recordings, zero-phase low-pass filtering, beat and fiducial detection,
//! a fixed 107-entry feature registry, feature ranking, a small zoo of
//! regressors (Gaussian process, SVR, bagged trees, GRNN, MLP), Bayesian
//! hyperparameter search, and agreement statistics (MAE, RMSE, R, 2SD,
//! limits of agreement).
//!
//! Respiration rates are expressed in breaths per minute throughout; heart
//! rates, where they appear, are beats per minute.

pub mod error;
pub mod eval;
pub mod features;
pub mod fiducials;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod select;
pub mod signal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{compute_metrics, make_splits, run_experiment, MetricsReport, SplitPlan};
pub use features::{extract_features, feature_registry, FeatureMatrix, FeatureVector};
pub use fiducials::{detect_beats, extract_beat_fiducials, BeatFiducials};
pub use models::{fit, predict, ModelSpec, TrainedModel};
pub use select::{select_top_k, FeatureRanking, RankingMethod};
pub use signal::{FilterSpec, Quality, Segment, TimeSeries};
pub use synth::{generate_ppg, SynthSpec};
