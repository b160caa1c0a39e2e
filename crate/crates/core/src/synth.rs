//! Deterministic synthetic fixtures: brightness-labelled frame stacks and
//! a voice-modulated gameplay session with matching frames.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FrameStackSample, Manifest, VideoSummary};
use crate::ingest::Frame;
use crate::{Result, STACK_DEPTH};

/// Uniform brightness plus ±`texture / 2` per-pixel noise, clamped to [0, 1].
pub fn textured_frame<R: Rng>(rng: &mut R, side: usize, brightness: f64, texture: f64) -> Vec<f32> {
    (0..side * side)
        .map(|_| (brightness + texture * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0) as f32)
        .collect()
}

pub fn mean_intensity(pixels: &[f32]) -> f64 {
    pixels.iter().map(|&v| v as f64).sum::<f64>() / pixels.len() as f64
}

/// Independent stacks whose label is the mean intensity of the last frame.
pub fn brightness_dataset(samples: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id: Arc<str> = Arc::from("brightness");
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let frames: [Arc<[f32]>; STACK_DEPTH] = std::array::from_fn(|_| {
            let b = rng.random_range(0.05..0.95);
            Arc::from(textured_frame(&mut rng, side, b, 0.2))
        });
        let label = mean_intensity(&frames[STACK_DEPTH - 1]) as f32;
        out.push(FrameStackSample {
            frames,
            label,
            video_id: id.clone(),
            end_frame_index: i as u32,
        });
    }
    Dataset {
        side,
        samples: out,
        manifest: Manifest {
            videos: vec![VideoSummary {
                id: id.to_string(),
                samples,
            }],
            notes: vec![],
        },
    }
}

/// Textured stacks that all carry the same label.
pub fn constant_label_dataset(samples: usize, side: usize, label: f32, seed: u64) -> Dataset {
    let mut ds = brightness_dataset(samples, side, seed);
    for s in &mut ds.samples {
        s.label = label;
    }
    ds
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub seconds: f64,
    pub fps: u32,
    pub side: usize,
    pub sample_rate: u32,
    /// Period of the voice amplitude envelope.
    pub period_s: f64,
    pub carrier_hz: f64,
    pub texture: f64,
    pub seed: u64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            seconds: 60.0,
            fps: 4,
            side: 64,
            sample_rate: 8000,
            period_s: 20.0,
            carrier_hz: 220.0,
            texture: 0.2,
            seed: 7,
        }
    }
}

/// A synthetic recording: commentary audio with a sinusoidal envelope and
/// frames whose brightness follows the affect label implied by it.
#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub spec: SessionSpec,
    pub audio: Vec<f32>,
    /// Envelope sampled at each frame time.
    pub envelope: Vec<f64>,
    /// `cos²(π x)` of the min-max normalized envelope, one per frame.
    pub labels: Vec<f64>,
    pub frames: Vec<Vec<f32>>,
}

pub fn synthetic_session(spec: SessionSpec) -> SyntheticSession {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let envelope_at = |t: f64| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * t / spec.period_s).sin();
    let n_audio = (spec.seconds * spec.sample_rate as f64) as usize;
    let audio: Vec<f32> = (0..n_audio)
        .map(|i| {
            let t = i as f64 / spec.sample_rate as f64;
            (envelope_at(t) * (2.0 * std::f64::consts::PI * spec.carrier_hz * t).sin()) as f32
        })
        .collect();
    let n_frames = (spec.seconds * spec.fps as f64) as usize;
    let envelope: Vec<f64> = (0..n_frames).map(|i| envelope_at((i as f64 + 0.5) / spec.fps as f64)).collect();
    let (lo, hi) = envelope
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let labels: Vec<f64> = envelope
        .iter()
        .map(|&v| {
            let x = (v - lo) / (hi - lo);
            let c = (std::f64::consts::PI * x).cos();
            c * c
        })
        .collect();
    let frames = labels
        .iter()
        .map(|&l| textured_frame(&mut rng, spec.side, 0.1 + 0.8 * l, spec.texture))
        .collect();
    SyntheticSession {
        spec,
        audio,
        envelope,
        labels,
        frames,
    }
}

impl SyntheticSession {
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.spec.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path.as_ref(), spec)?;
        for &s in &self.audio {
            w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Writes frames `range` as `frame_00000.png`, ... into `dir`.
    pub fn write_frames(&self, dir: impl AsRef<Path>, range: std::ops::Range<usize>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let side = self.spec.side as u32;
        let mut paths = Vec::new();
        for (k, i) in range.enumerate() {
            let px = &self.frames[i];
            let img = GrayImage::from_fn(side, side, |x, y| Luma([(px[(y * side + x) as usize] * 255.0).round() as u8]));
            let p = dir.join(format!("frame_{k:05}.png"));
            img.save(&p).map_err(|source| crate::Error::Image { path: p.clone(), source })?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// In-memory frames at the session frame rate.
    pub fn frame_sequence(&self, range: std::ops::Range<usize>) -> Vec<Frame> {
        range
            .enumerate()
            .map(|(k, i)| Frame {
                pixels: self.frames[i].clone(),
                width: self.spec.side,
                height: self.spec.side,
                timestamp_ms: crate::ingest::frame_timestamp_ms(k, self.spec.fps),
            })
            .collect()
    }
}
