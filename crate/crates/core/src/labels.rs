//! Affect label synthesis from normalized voice amplitude.
//!
//! Loud and silent chunks both indicate high affect (a reaction or
//! concentration), so amplitudes are folded with `cos²(πx)` before a
//! centered moving average.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::ingest::AmplitudeSeries;
use crate::{Error, Result};

/// Default smoothing window in chunks (2 s at 250 ms chunks).
pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AffectLabelSeries {
    pub values: Vec<f64>,
    pub window: usize,
    pub chunk_ms: u32,
}

impl AffectLabelSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "frame_index,label")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{i},{v:.6}")?;
        }
        Ok(())
    }

    /// Reads a `frame_index,label` CSV. The window is not stored in the
    /// file and is reported as 0.
    pub fn read_csv(path: impl AsRef<Path>, chunk_ms: u32) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut values = Vec::new();
        for (row, rec) in reader.deserialize::<(usize, f64)>().enumerate() {
            let (index, label) = rec?;
            if index != row {
                return Err(Error::MalformedCsv(format!(
                    "frame_index {index} at row {row}, expected {row}"
                )));
            }
            if !(0.0..=1.0).contains(&label) {
                return Err(Error::Unnormalized(label));
            }
            values.push(label);
        }
        Ok(Self {
            values,
            window: 0,
            chunk_ms,
        })
    }
}

/// `cos²(πx)` for a normalized amplitude `x`.
pub fn convert(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Unnormalized(x));
    }
    let c = (PI * x).cos();
    Ok((c * c).clamp(0.0, 1.0))
}

/// Centered moving average; the window shrinks at the boundaries.
///
/// Index `i` averages `values[i - w/2 ..= i + w/2]` clipped to the valid
/// range, so an even `window` spans `window + 1` samples in the interior.
pub fn smooth(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 || window > values.len() {
        return Err(Error::InvalidArgument(format!(
            "smoothing window {window} must be in [1, {}]",
            values.len()
        )));
    }
    let radius = window / 2;
    Ok((0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(values.len() - 1);
            let span = &values[lo..=hi];
            let (min, max) = span
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            // Rounding cannot push the mean outside the window's range.
            (span.iter().sum::<f64>() / span.len() as f64).clamp(min, max)
        })
        .collect())
}

pub fn synthesize_labels(amps: &AmplitudeSeries, window: usize) -> Result<AffectLabelSeries> {
    let converted = amps.values.iter().map(|&x| convert(x)).collect::<Result<Vec<_>>>()?;
    Ok(AffectLabelSeries {
        values: smooth(&converted, window)?,
        window,
        chunk_ms: amps.chunk_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_smooth(values: &[f64], window: usize) -> Vec<f64> {
        let r = (window / 2) as isize;
        (0..values.len() as isize)
            .map(|i| {
                let picked: Vec<f64> = (i - r..=i + r)
                    .filter(|&j| j >= 0 && j < values.len() as isize)
                    .map(|j| values[j as usize])
                    .collect();
                picked.iter().sum::<f64>() / picked.len() as f64
            })
            .collect()
    }

    fn amps(values: Vec<f64>) -> AmplitudeSeries {
        AmplitudeSeries {
            chunk_ms: 250,
            source_duration_ms: values.len() as u64 * 250,
            values,
        }
    }

    #[test]
    fn convert_examples() {
        assert_eq!(convert(0.0).unwrap(), 1.0);
        assert!(convert(0.5).unwrap().abs() < 1e-15);
        assert!((convert(0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((convert(1.0).unwrap() - 1.0).abs() < 1e-15);
        let err = convert(1.5).unwrap_err();
        assert!(err.to_string().starts_with("unnormalized input"));
        assert!(convert(-0.01).is_err());
        assert!(convert(f64::NAN).is_err());
    }

    #[test]
    fn smooth_examples() {
        let s = [0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(smooth(&s, 1).unwrap(), s.to_vec());
        let out = smooth(&s, 3).unwrap();
        let expect = [0.5, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 0.5];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = vec![0.1; 9];
        for w in 1..=9 {
            assert_eq!(smooth(&c, w).unwrap(), c);
        }
        assert!(smooth(&s, 0).is_err());
        assert!(smooth(&s, 6).is_err());
    }

    #[test]
    fn synthesize_examples() {
        let l = synthesize_labels(&amps(vec![0.5; 6]), 3).unwrap();
        assert!(l.values.iter().all(|v| v.abs() < 1e-15));
        let l = synthesize_labels(&amps(vec![0.0; 6]), 3).unwrap();
        assert!(l.values.iter().all(|&v| v == 1.0));
        let l = synthesize_labels(&amps(vec![0.0, 0.5, 1.0, 0.5, 0.0]), 1).unwrap();
        let oracle: Vec<f64> = [0.0f64, 0.5, 1.0, 0.5, 0.0].iter().map(|x| (PI * x).cos().powi(2)).collect();
        for (a, b) in l.values.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(l.window, 1);
        assert_eq!(l.len(), 5);
    }

    #[test]
    fn labels_csv_roundtrip() {
        let l = AffectLabelSeries {
            values: vec![0.123456, 1.0],
            window: 8,
            chunk_ms: 250,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "frame_index,label\n0,0.123456\n1,1.000000\n");
        std::fs::write(&p, buf).unwrap();
        assert_eq!(AffectLabelSeries::read_csv(&p, 250).unwrap().values, l.values);
    }

    proptest! {
        #[test]
        fn convert_symmetric(x in 0.0f64..=1.0) {
            prop_assert!((convert(x).unwrap() - convert(1.0 - x).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn smooth_matches_brute_force_and_keeps_bounds(
            values in proptest::collection::vec(-5.0f64..5.0, 1..64),
            w in 1usize..64,
        ) {
            let w = 1 + (w - 1) % values.len();
            let out = smooth(&values, w).unwrap();
            let oracle = brute_smooth(&values, w);
            let (lo, hi) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            for (a, b) in out.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(*a >= lo && *a <= hi);
            }
        }

        #[test]
        fn full_window_center_is_global_mean(values in proptest::collection::vec(0.0f64..1.0, 1..64)) {
            let out = smooth(&values, values.len()).unwrap();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            prop_assert!((out[values.len() / 2] - mean).abs() < 1e-12);
        }

        #[test]
        fn labels_bounded(values in proptest::collection::vec(0.0f64..=1.0, 1..64), w in 1usize..64) {
            let w = 1 + (w - 1) % values.len();
            let l = synthesize_labels(&amps(values), w).unwrap();
            prop_assert!(l.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
