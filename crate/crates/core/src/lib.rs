//! Player experience modelling from gameplay video.
//!
//! The pipeline turns a Let's Play recording into a trained affect
//! regressor:
//!
//! 1. [`ingest`] decodes commentary audio into per-chunk amplitudes and the
//!    video into standardized grayscale frames.
//! 2. [`labels`] maps amplitudes to affect values with `cos²(πx)` and a
//!    centered moving average.
//! 3. [`dataset`] slides a four-frame window over each video and pairs it
//!    with a label.
//! 4. [`model`] trains and runs the CNN regressor.
//!
//! The evaluation side processes physiological recordings ([`physio`]),
//! runs rank statistics ([`stats`]) and renders summary tables and plots
//! ([`report`]). [`affectd`] serves the trained model over TCP for live use.

pub mod affectd;
pub mod config;
pub mod dataset;
mod error;
pub mod ingest;
pub mod labels;
pub mod model;
pub mod physio;
pub mod report;
pub mod stats;
pub mod synth;

pub use config::RunConfig;
pub use dataset::{Dataset, FrameStackSample};
pub use error::{Error, Result};
pub use ingest::{AmplitudeSeries, AudioTrack, Frame};
pub use labels::AffectLabelSeries;
pub use model::{AffectTrace, ModelBundle, ModelConfig, Predictor};
pub use physio::{EdaFeatures, HrvFeatures, PhysioRecording, SignalKind};
pub use stats::{CorrelationResult, RankResult};

/// Number of consecutive frames fed to the model as one input.
pub const STACK_DEPTH: usize = 4;
