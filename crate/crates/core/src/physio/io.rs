use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eda::EdaSession;
use super::ppg::{hrv_features, ppg_nn_intervals_with, HrvFeatures, PpgParams};
use super::{PhysioRecording, Segment};
use crate::{Error, Result};

/// Uniformly sampled sensor trace read from a `t_ms,value` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub start_ms: f64,
    pub sample_rate: f64,
    pub values: Vec<f64>,
}

/// Allowed deviation of any timestep from the median timestep.
const UNIFORMITY_TOLERANCE: f64 = 0.01;

pub fn read_sensor_csv(path: impl AsRef<Path>) -> Result<SensorTrace> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_ms", "value"] {
        return Err(Error::MalformedCsv(format!("expected header t_ms,value, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in reader.deserialize::<(f64, f64)>() {
        let (t, v) = rec?;
        times.push(t);
        values.push(v);
    }
    sensor_trace(&times, values)
}

pub(crate) fn sensor_trace(times: &[f64], values: Vec<f64>) -> Result<SensorTrace> {
    if times.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: times.len(),
        });
    }
    let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = steps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) {
        return Err(Error::NonUniformSampling(format!("median timestep {median} ms")));
    }
    if let Some((i, step)) = steps
        .iter()
        .enumerate()
        .find(|(_, s)| ((*s - median) / median).abs() > UNIFORMITY_TOLERANCE)
    {
        return Err(Error::NonUniformSampling(format!(
            "timestep {step} ms at row {} deviates from median {median} ms",
            i + 1
        )));
    }
    Ok(SensorTrace {
        start_ms: times[0],
        sample_rate: 1000.0 / median,
        values,
    })
}

/// Reads a `label,start_ms,end_ms` segment file.
pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<Segment>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for rec in reader.deserialize::<(String, f64, f64)>() {
        let (label, start_ms, end_ms) = rec?;
        out.push(Segment::new(label, start_ms, end_ms));
    }
    Ok(out)
}

impl SensorTrace {
    /// Recording with `segments` shifted onto the trace's own clock.
    pub fn into_recording(self, kind: super::SignalKind, segments: &[Segment]) -> Result<PhysioRecording> {
        let shifted = segments
            .iter()
            .map(|s| Segment::new(s.label.clone(), s.start_ms - self.start_ms, s.end_ms - self.start_ms))
            .collect();
        PhysioRecording::new(self.values, self.sample_rate, kind, shifted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaSummary {
    pub mean_scl: f64,
    pub mean_normalized_scl: f64,
    pub std_normalized_scl: f64,
    pub scr_peak_count: usize,
    pub scr_mean_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvSummary {
    #[serde(flatten)]
    pub features: HrvFeatures,
    pub nn_discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub label: String,
    pub start_ms: f64,
    pub end_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eda: Option<EdaSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hrv: Option<HrvSummary>,
    /// Per-segment failures (e.g. too few beats) that did not abort the run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Per-participant feature document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFeatures {
    pub participant: String,
    pub segments: Vec<SegmentFeatures>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl ParticipantFeatures {
    /// Features for every segment of the given recordings. Segments are
    /// taken from whichever recording is present (EDA first).
    pub fn compute(
        participant: impl Into<String>,
        eda: Option<(&PhysioRecording, &super::EdaParams)>,
        ppg: Option<(&PhysioRecording, &PpgParams)>,
    ) -> Result<Self> {
        let segments = eda
            .map(|(r, _)| r.segments.clone())
            .or_else(|| ppg.map(|(r, _)| r.segments.clone()))
            .unwrap_or_default();
        let eda_session = eda.map(|(r, p)| EdaSession::process(r, p)).transpose()?;
        let mut out = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let mut errors = Vec::new();
            let eda = match &eda_session {
                Some(session) => match session.features(seg) {
                    Ok(f) => {
                        let (mean_normalized_scl, std_normalized_scl) = mean_std(&f.normalized_scl);
                        Some(EdaSummary {
                            mean_scl: mean_std(&f.scl).0,
                            mean_normalized_scl,
                            std_normalized_scl,
                            scr_peak_count: f.scr_peak_count,
                            scr_mean_amplitude: f.scr_mean_amplitude,
                        })
                    }
                    Err(e) => {
                        errors.push(format!("eda: {e}"));
                        None
                    }
                },
                None => None,
            };
            let hrv = match ppg {
                Some((rec, params)) => {
                    let seg = rec.segments.get(i).unwrap_or(seg);
                    match ppg_nn_intervals_with(rec, seg, params).and_then(|nn| {
                        hrv_features(&nn.intervals_ms).map(|features| HrvSummary {
                            features,
                            nn_discarded: nn.discarded,
                        })
                    }) {
                        Ok(h) => Some(h),
                        Err(e) => {
                            errors.push(format!("hrv: {e}"));
                            None
                        }
                    }
                }
                None => None,
            };
            out.push(SegmentFeatures {
                label: seg.label.clone(),
                start_ms: seg.start_ms,
                end_ms: seg.end_ms,
                eda,
                hrv,
                errors,
            });
        }
        Ok(Self {
            participant: participant.into(),
            segments: out,
        })
    }
}
