//! Digital Butterworth filters as cascaded biquads.
//!
//! Sections come from the analog prototype poles mapped through the
//! bilinear transform with the cutoff prewarped, so the -3 dB point lands
//! exactly on the requested frequency. [`filtfilt`] runs the cascade
//! forward and backward for zero phase.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass { cutoff: f64 },
    Highpass { cutoff: f64 },
    /// High-pass at `low` cascaded with low-pass at `high`, each of half the order.
    Bandpass { low: f64, high: f64 },
}

/// Transposed direct-form II second-order section (`a0 == 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant input `x` produce its steady-state output.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let z2 = self.b[2] * x - self.a[1] * y;
        let z1 = self.b[1] * x - self.a[0] * y + z2;
        [z1, z2]
    }

    /// Largest pole magnitude.
    fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
}

#[derive(Clone, Copy)]
enum Response {
    Low,
    High,
}

fn check_cutoff(cutoff: f64, sample_rate: f64) -> Result<()> {
    let nyquist = sample_rate / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::InvalidCutoff { cutoff, nyquist });
    }
    Ok(())
}

fn design(order: usize, cutoff: f64, sample_rate: f64, response: Response) -> Result<Vec<Biquad>> {
    if order == 0 {
        return Err(Error::InvalidArgument("filter order must be positive".into()));
    }
    check_cutoff(cutoff, sample_rate)?;
    // Prewarped analog cutoff, normalized by 2·fs.
    let k = (PI * cutoff / sample_rate).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for pair in 0..order / 2 {
        // Pole pair at angle θ from the negative real axis: s² + 2 sin(φ) s + 1.
        let phi = PI * (2 * pair + 1) as f64 / (2 * order) as f64;
        let damping = 2.0 * phi.sin();
        let norm = 1.0 / (1.0 + damping * k + k2);
        let a = [2.0 * (k2 - 1.0) * norm, (1.0 - damping * k + k2) * norm];
        let b = match response {
            Response::Low => [k2 * norm, 2.0 * k2 * norm, k2 * norm],
            Response::High => [norm, -2.0 * norm, norm],
        };
        sections.push(Biquad { b, a });
    }
    if order % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        let a = [(k - 1.0) * norm, 0.0];
        let b = match response {
            Response::Low => [k * norm, k * norm, 0.0],
            Response::High => [norm, -norm, 0.0],
        };
        sections.push(Biquad { b, a });
    }
    Ok(sections)
}

impl Cascade {
    pub fn butterworth(kind: FilterKind, order: usize, sample_rate: f64) -> Result<Self> {
        let sections = match kind {
            FilterKind::Lowpass { cutoff } => design(order, cutoff, sample_rate, Response::Low)?,
            FilterKind::Highpass { cutoff } => design(order, cutoff, sample_rate, Response::High)?,
            FilterKind::Bandpass { low, high } => {
                if order % 2 != 0 {
                    return Err(Error::InvalidArgument("band-pass order must be even".into()));
                }
                if !(low < high) {
                    return Err(Error::InvalidArgument(format!("band edges {low} >= {high}")));
                }
                let mut s = design(order / 2, low, sample_rate, Response::High)?;
                s.extend(design(order / 2, high, sample_rate, Response::Low)?);
                s
            }
        };
        Ok(Self { sections })
    }

    /// Single causal pass, starting in the steady state of `signal[0]`.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        let Some(&first) = signal.first() else {
            return out;
        };
        let mut level = first;
        for s in &self.sections {
            let [mut z1, mut z2] = s.steady_state(level);
            level *= s.dc_gain();
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b[0] * x + z1;
                z1 = s.b[1] * x - s.a[0] * y + z2;
                z2 = s.b[2] * x - s.a[1] * y;
                *v = y;
            }
        }
        out
    }

    /// Samples needed for the slowest pole's transient to fall below 1e-14.
    fn settle_len(&self) -> usize {
        let r = self.sections.iter().map(Biquad::pole_radius).fold(0.0, f64::max);
        if r <= 0.0 {
            return 1;
        }
        if r >= 1.0 {
            return MAX_PAD;
        }
        ((1e-14f64).ln() / r.ln()).ceil().clamp(1.0, MAX_PAD as f64) as usize
    }

    /// Magnitude response at `freq` Hz.
    pub fn gain_at(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let z1 = (w.cos(), -w.sin());
        let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections
            .iter()
            .map(|s| {
                let num = (s.b[0] + s.b[1] * z1.0 + s.b[2] * z2.0, s.b[1] * z1.1 + s.b[2] * z2.1);
                let den = (1.0 + s.a[0] * z1.0 + s.a[1] * z2.0, s.a[0] * z1.1 + s.a[1] * z2.1);
                (num.0.hypot(num.1)) / (den.0.hypot(den.1))
            })
            .product()
    }
}

const MAX_PAD: usize = 1 << 21;

/// Zero-phase forward-backward filtering.
///
/// Both ends are extended by odd reflection (`2·x[0] − x[k]`, holding the
/// last reflected value once the signal runs out) until transients have
/// decayed, so edge effects are negligible and the operation commutes with
/// time reversal.
pub fn filtfilt(cascade: &Cascade, signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = cascade.settle_len();
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * first - signal[k.min(n - 1)]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|k| 2.0 * last - signal[n - 1 - k.min(n - 1)]));
    let mut y = cascade.filter(&ext);
    y.reverse();
    let mut y = cascade.filter(&y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Designs and applies a zero-phase Butterworth filter.
pub fn butterworth(signal: &[f64], sample_rate: f64, kind: FilterKind, order: usize) -> Result<Vec<f64>> {
    let cascade = Cascade::butterworth(kind, order, sample_rate)?;
    Ok(filtfilt(&cascade, signal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: f64 = 100.0;

    fn sine(freq: f64, seconds: f64) -> Vec<f64> {
        (0..(seconds * FS) as usize).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    /// Amplitude of a sine of known frequency by least squares on the middle half.
    fn measured_amplitude(signal: &[f64], freq: f64) -> f64 {
        let n = signal.len();
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &y) in signal.iter().enumerate().take(3 * n / 4).skip(n / 4) {
            let w = 2.0 * PI * freq * i as f64 / FS;
            let (s, c) = w.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += y * s;
            yc += y * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }

    fn lowpass3() -> Cascade {
        Cascade::butterworth(FilterKind::Lowpass { cutoff: 3.0 }, 4, FS).unwrap()
    }

    #[test]
    fn dc_passes_unchanged() {
        let x = vec![2.5; 500];
        let y = butterworth(&x, FS, FilterKind::Lowpass { cutoff: 3.0 }, 4).unwrap();
        assert_eq!(y.len(), x.len());
        for v in &y[100..400] {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn passband_and_cutoff_response() {
        let c = lowpass3();
        let one = sine(1.0, 20.0);
        assert!(measured_amplitude(&c.filter(&one), 1.0) >= 0.99);
        assert!(measured_amplitude(&filtfilt(&c, &one), 1.0) >= 0.99);

        let three = sine(3.0, 20.0);
        let single = measured_amplitude(&c.filter(&three), 3.0);
        assert!((single - 0.5f64.sqrt()).abs() < 0.02 * 0.5f64.sqrt(), "{single}");
        let double = measured_amplitude(&filtfilt(&c, &three), 3.0);
        assert!((double - 0.5).abs() < 0.01, "{double}");
    }

    #[test]
    fn analytic_gain_at_cutoff() {
        for order in 1..=6 {
            let c = Cascade::butterworth(FilterKind::Lowpass { cutoff: 7.0 }, order, FS).unwrap();
            assert!((c.gain_at(7.0, FS) - 0.5f64.sqrt()).abs() < 1e-12);
            assert!((c.gain_at(0.0, FS) - 1.0).abs() < 1e-12);
            let h = Cascade::butterworth(FilterKind::Highpass { cutoff: 7.0 }, order, FS).unwrap();
            assert!((h.gain_at(7.0, FS) - 0.5f64.sqrt()).abs() < 1e-12);
            assert!(h.gain_at(0.0, FS) < 1e-12);
        }
    }

    #[test]
    fn bandpass_rejects_dc_and_passes_center() {
        let c = Cascade::butterworth(FilterKind::Bandpass { low: 0.5, high: 8.0 }, 4, FS).unwrap();
        assert_eq!(c.sections.len(), 2);
        assert!(c.gain_at(0.0, FS) < 1e-12);
        assert!(c.gain_at(2.0, FS) > 0.9);
        assert!(c.gain_at(30.0, FS) < 0.1);
        let y = filtfilt(&c, &vec![1.0; 1000]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn invalid_designs() {
        assert!(matches!(
            Cascade::butterworth(FilterKind::Lowpass { cutoff: 50.0 }, 4, FS),
            Err(Error::InvalidCutoff { .. })
        ));
        assert!(Cascade::butterworth(FilterKind::Lowpass { cutoff: 0.0 }, 4, FS).is_err());
        assert!(Cascade::butterworth(FilterKind::Bandpass { low: 0.5, high: 8.0 }, 3, FS).is_err());
        assert!(Cascade::butterworth(FilterKind::Bandpass { low: 8.0, high: 0.5 }, 4, FS).is_err());
        assert!(Cascade::butterworth(FilterKind::Lowpass { cutoff: 3.0 }, 0, FS).is_err());
    }

    #[test]
    fn empty_and_short_signals() {
        assert!(butterworth(&[], FS, FilterKind::Lowpass { cutoff: 3.0 }, 4).unwrap().is_empty());
        let y = butterworth(&[1.0], FS, FilterKind::Lowpass { cutoff: 3.0 }, 4).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn zero_phase_commutes_with_reversal(values in proptest::collection::vec(-1.0f64..1.0, 1..300)) {
            let c = lowpass3();
            let forward = filtfilt(&c, &values);
            let mut rev = values.clone();
            rev.reverse();
            let mut back = filtfilt(&c, &rev);
            back.reverse();
            for (a, b) in forward.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
