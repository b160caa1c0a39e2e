use serde::{Deserialize, Serialize};

use super::filter::{butterworth, FilterKind};
use super::peaks::find_peaks;
use super::{PhysioRecording, Segment, SignalKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpgParams {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub order: usize,
    /// Refractory spacing between systolic peaks (180 bpm).
    pub min_beat_spacing_ms: f64,
    pub min_nn_ms: f64,
    pub max_nn_ms: f64,
}

impl Default for PpgParams {
    fn default() -> Self {
        Self {
            band_low_hz: 0.5,
            band_high_hz: 8.0,
            order: 4,
            min_beat_spacing_ms: 333.0,
            min_nn_ms: 300.0,
            max_nn_ms: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnIntervals {
    pub intervals_ms: Vec<f64>,
    /// Intervals dropped as outside the physiologic bounds.
    pub discarded: usize,
}

/// NN intervals from systolic peaks of the band-passed pulse waveform.
///
/// The whole recording is filtered before slicing out `segment`.
pub fn ppg_nn_intervals(rec: &PhysioRecording, segment: &Segment) -> Result<NnIntervals> {
    ppg_nn_intervals_with(rec, segment, &PpgParams::default())
}

pub fn ppg_nn_intervals_with(rec: &PhysioRecording, segment: &Segment, params: &PpgParams) -> Result<NnIntervals> {
    rec.expect_kind(SignalKind::Ppg)?;
    let fs = rec.sample_rate;
    let filtered = butterworth(
        &rec.signal,
        fs,
        FilterKind::Bandpass {
            low: params.band_low_hz,
            high: params.band_high_hz,
        },
        params.order,
    )?;
    let range = segment.sample_range(fs, filtered.len());
    let offset = range.start;
    let spacing = (params.min_beat_spacing_ms * fs / 1000.0).ceil().max(1.0) as usize;
    let peaks = find_peaks(&filtered[range], Some(0.0), None, spacing);
    if peaks.len() < 2 {
        return Err(Error::InsufficientBeats);
    }
    let times: Vec<f64> = peaks.iter().map(|p| (p.index + offset) as f64 * 1000.0 / fs).collect();
    let mut intervals_ms = Vec::with_capacity(times.len() - 1);
    let mut discarded = 0;
    for w in times.windows(2) {
        let d = w[1] - w[0];
        if (params.min_nn_ms..=params.max_nn_ms).contains(&d) {
            intervals_ms.push(d);
        } else {
            discarded += 1;
        }
    }
    if discarded > 0 {
        log::info!("segment {}: discarded {discarded} NN intervals", segment.label);
    }
    Ok(NnIntervals {
        intervals_ms,
        discarded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub nn_intervals_ms: Vec<f64>,
    pub sdnn: f64,
    /// Needs at least three intervals.
    pub sdsd: Option<f64>,
    pub rmssd: f64,
    pub pnn20: f64,
    pub pnn50: f64,
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Time-domain HRV. Successive-difference proportions use strict `>`.
pub fn hrv_features(nn_intervals_ms: &[f64]) -> Result<HrvFeatures> {
    if nn_intervals_ms.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: nn_intervals_ms.len(),
        });
    }
    if let Some(bad) = nn_intervals_ms.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("NN interval {bad} must be positive")));
    }
    let diffs: Vec<f64> = nn_intervals_ms.windows(2).map(|w| w[1] - w[0]).collect();
    let m = diffs.len() as f64;
    let frac_over = |ms: f64| diffs.iter().filter(|d| d.abs() > ms).count() as f64 / m;
    Ok(HrvFeatures {
        nn_intervals_ms: nn_intervals_ms.to_vec(),
        sdnn: sample_std(nn_intervals_ms),
        sdsd: (diffs.len() >= 2).then(|| sample_std(&diffs)),
        rmssd: (diffs.iter().map(|d| d * d).sum::<f64>() / m).sqrt(),
        pnn20: frac_over(20.0),
        pnn50: frac_over(50.0),
    })
}
