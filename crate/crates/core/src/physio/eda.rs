use serde::{Deserialize, Serialize};

use super::filter::{butterworth, FilterKind};
use super::peaks::find_peaks;
use super::{PhysioRecording, Segment, SignalKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdaParams {
    pub denoise_cutoff_hz: f64,
    pub denoise_order: usize,
    pub tonic_cutoff_hz: f64,
    pub tonic_order: usize,
    /// Minimum SCR peak prominence, in signal units.
    pub scr_prominence: f64,
    pub scr_min_separation_s: f64,
    pub min_segment_s: f64,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            denoise_cutoff_hz: 3.0,
            denoise_order: 4,
            tonic_cutoff_hz: 0.05,
            tonic_order: 2,
            scr_prominence: 0.01,
            scr_min_separation_s: 1.0,
            min_segment_s: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaFeatures {
    /// Tonic skin conductance level over the segment, at the sensor rate.
    pub scl: Vec<f64>,
    pub scr_peak_count: usize,
    /// Mean prominence of the detected SCR peaks (0 when there are none).
    pub scr_mean_amplitude: f64,
    /// Tonic level min-max normalized over the whole session.
    pub normalized_scl: Vec<f64>,
}

impl EdaFeatures {
    pub fn mean_normalized_scl(&self) -> f64 {
        self.normalized_scl.iter().sum::<f64>() / self.normalized_scl.len().max(1) as f64
    }
}

/// Whole-session EDA decomposition, computed once and sliced per segment.
#[derive(Debug, Clone)]
pub struct EdaSession {
    pub sample_rate: f64,
    pub denoised: Vec<f64>,
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub normalized_scl: Vec<f64>,
    params: EdaParams,
}

impl EdaSession {
    pub fn process(rec: &PhysioRecording, params: &EdaParams) -> Result<Self> {
        rec.expect_kind(SignalKind::Eda)?;
        let fs = rec.sample_rate;
        let denoised = butterworth(
            &rec.signal,
            fs,
            FilterKind::Lowpass {
                cutoff: params.denoise_cutoff_hz,
            },
            params.denoise_order,
        )?;
        let tonic = butterworth(
            &denoised,
            fs,
            FilterKind::Lowpass {
                cutoff: params.tonic_cutoff_hz,
            },
            params.tonic_order,
        )?;
        let phasic: Vec<f64> = denoised.iter().zip(&tonic).map(|(d, t)| d - t).collect();
        let (lo, hi) = tonic
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let normalized_scl = if hi > lo {
            tonic.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; tonic.len()]
        };
        Ok(Self {
            sample_rate: fs,
            denoised,
            tonic,
            phasic,
            normalized_scl,
            params: params.clone(),
        })
    }

    pub fn features(&self, segment: &Segment) -> Result<EdaFeatures> {
        if segment.duration_ms() < self.params.min_segment_s * 1000.0 {
            return Err(Error::SegmentTooShort);
        }
        let range = segment.sample_range(self.sample_rate, self.tonic.len());
        if (range.len() as f64) < self.params.min_segment_s * self.sample_rate {
            return Err(Error::SegmentTooShort);
        }
        let separation = (self.params.scr_min_separation_s * self.sample_rate).ceil() as usize;
        let peaks = find_peaks(&self.phasic[range.clone()], None, Some(self.params.scr_prominence), separation);
        let scr_mean_amplitude = if peaks.is_empty() {
            0.0
        } else {
            peaks.iter().map(|p| p.prominence).sum::<f64>() / peaks.len() as f64
        };
        Ok(EdaFeatures {
            scl: self.tonic[range.clone()].to_vec(),
            scr_peak_count: peaks.len(),
            scr_mean_amplitude,
            normalized_scl: self.normalized_scl[range].to_vec(),
        })
    }
}

/// EDA features of one segment. Normalization spans the full recording.
pub fn eda_features(rec: &PhysioRecording, segment: &Segment) -> Result<EdaFeatures> {
    EdaSession::process(rec, &EdaParams::default())?.features(segment)
}
