//! Physiological signal processing: EDA tonic/phasic features and
//! PPG-derived time-domain HRV.

mod eda;
pub mod filter;
mod io;
mod peaks;
mod ppg;

pub use eda::{eda_features, EdaFeatures, EdaParams, EdaSession};
pub use filter::{butterworth, filtfilt, Cascade, FilterKind};
pub use io::{read_segments, read_sensor_csv, EdaSummary, HrvSummary, ParticipantFeatures, SegmentFeatures, SensorTrace};
pub use peaks::{find_peaks, Peak};
pub use ppg::{hrv_features, ppg_nn_intervals, ppg_nn_intervals_with, HrvFeatures, NnIntervals, PpgParams};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Eda,
    Ppg,
}

impl SignalKind {
    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Eda => "EDA",
            SignalKind::Ppg => "PPG",
        }
    }
}

/// A labelled time span, typically one game level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Segment {
    pub fn new(label: impl Into<String>, start_ms: f64, end_ms: f64) -> Self {
        Self {
            label: label.into(),
            start_ms,
            end_ms,
        }
    }

    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }

    /// Sample index range `[start, end)` covered at `sample_rate`.
    pub fn sample_range(&self, sample_rate: f64, len: usize) -> std::ops::Range<usize> {
        let start = ((self.start_ms * sample_rate / 1000.0).ceil().max(0.0) as usize).min(len);
        let end = ((self.end_ms * sample_rate / 1000.0).ceil().max(0.0) as usize).min(len);
        start..end.max(start)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysioRecording {
    pub signal: Vec<f64>,
    pub sample_rate: f64,
    pub kind: SignalKind,
    pub segments: Vec<Segment>,
}

impl PhysioRecording {
    pub fn new(signal: Vec<f64>, sample_rate: f64, kind: SignalKind, segments: Vec<Segment>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let rec = Self {
            signal,
            sample_rate,
            kind,
            segments,
        };
        let duration = rec.duration_ms();
        let mut sorted: Vec<&Segment> = rec.segments.iter().collect();
        sorted.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
        for s in &sorted {
            if !(s.start_ms >= 0.0 && s.end_ms > s.start_ms && s.end_ms <= duration + 1e-6) {
                return Err(Error::InvalidSegment {
                    label: s.label.clone(),
                    reason: format!("[{}, {}) outside [0, {duration}]", s.start_ms, s.end_ms),
                });
            }
        }
        for w in sorted.windows(2) {
            if w[1].start_ms < w[0].end_ms {
                return Err(Error::InvalidSegment {
                    label: w[1].label.clone(),
                    reason: format!("overlaps {}", w[0].label),
                });
            }
        }
        Ok(rec)
    }

    pub fn duration_ms(&self) -> f64 {
        self.signal.len() as f64 * 1000.0 / self.sample_rate
    }

    pub(crate) fn expect_kind(&self, kind: SignalKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongKind {
                expected: kind.name(),
                actual: self.kind.name(),
            });
        }
        Ok(())
    }
}
