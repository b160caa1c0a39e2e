//! Audio and frame ingestion.
//!
//! Audio is reduced to one mean absolute amplitude per fixed-length chunk
//! and min-max normalized over the whole recording. Frames are read from a
//! directory of PNG images (lexicographic filename order), resized to a
//! square side with bilinear interpolation and reduced to BT.601 luma.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{imageops::FilterType, DynamicImage, Rgb32FImage};

use crate::{Error, Result};

pub const DEFAULT_CHUNK_MS: u32 = 250;
pub const DEFAULT_FPS: u32 = 4;
pub const DEFAULT_SIDE: usize = 256;

/// BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Mono PCM audio with samples scaled to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    samples: Vec<f32>,
    sample_rate: u32,
    duration_ms: u64,
}

impl AudioTrack {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        let duration_ms = (1000.0 * samples.len() as f64 / sample_rate as f64).round() as u64;
        Ok(Self {
            samples,
            sample_rate,
            duration_ms,
        })
    }

    /// Builds a mono track by averaging interleaved channels.
    pub fn from_interleaved(interleaved: &[f32], channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("channel count must be positive".into()));
        }
        let mono = interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float).
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioTrack> {
    let reader = hound::WavReader::open(path.as_ref())?;
    read_wav_from(reader)
}

fn read_wav_from<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<AudioTrack> {
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::WavFormat(format!("{fmt:?} with {bits} bits per sample")));
        }
    };
    AudioTrack::from_interleaved(&interleaved, spec.channels as usize, spec.sample_rate)
}

/// Mean absolute sample value per `chunk_ms` window.
///
/// Chunk `i` holds the samples whose time falls in
/// `[i * chunk_ms, (i + 1) * chunk_ms)`. A trailing partial chunk is kept.
pub fn chunk_audio(track: &AudioTrack, chunk_ms: u32) -> Result<Vec<f64>> {
    if track.is_empty() {
        return Err(Error::EmptyAudio);
    }
    // Every chunk must hold at least one sample.
    if chunk_ms == 0 || (track.sample_rate as u64 * chunk_ms as u64) < 1000 {
        return Err(Error::InvalidChunkSize);
    }
    Ok(chunk_bounds(track.samples.len(), track.sample_rate, chunk_ms)
        .map(|(start, end)| {
            let chunk = &track.samples[start..end];
            chunk.iter().map(|&s| (s as f64).abs()).sum::<f64>() / chunk.len() as f64
        })
        .collect())
}

/// Sample index ranges for each chunk. Integer arithmetic keeps the
/// boundaries exact: sample `n` belongs to chunk `floor(n * 1000 / (rate * chunk_ms))`.
pub(crate) fn chunk_bounds(
    len: usize,
    sample_rate: u32,
    chunk_ms: u32,
) -> impl Iterator<Item = (usize, usize)> {
    let num = sample_rate as u128 * chunk_ms as u128;
    let start_of = move |i: u128| -> usize { (i * num).div_ceil(1000) as usize };
    let mut i: u128 = 0;
    std::iter::from_fn(move || {
        let start = start_of(i);
        if start >= len {
            return None;
        }
        let end = start_of(i + 1).min(len);
        i += 1;
        Some((start, end))
    })
}

/// Min-max normalization over the whole series. A constant series maps to
/// all zeros.
pub fn normalize_amplitudes(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("amplitudes"));
    }
    let (min, max) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return Ok(vec![0.0; raw.len()]);
    }
    let range = max - min;
    Ok(raw.iter().map(|&v| ((v - min) / range).clamp(0.0, 1.0)).collect())
}

/// Zeroes samples whose magnitude is below `threshold * max|s|`.
pub fn noise_gate(track: &AudioTrack, threshold: f64) -> Result<AudioTrack> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "noise gate threshold {threshold} must be in [0, 1)"
        )));
    }
    if threshold == 0.0 {
        return Ok(track.clone());
    }
    let peak = track.samples.iter().fold(0.0f64, |m, &s| m.max((s as f64).abs()));
    let cut = threshold * peak;
    let samples = track
        .samples
        .iter()
        .map(|&s| if (s as f64).abs() < cut { 0.0 } else { s })
        .collect();
    Ok(AudioTrack {
        samples,
        ..track.clone()
    })
}

/// Per-chunk normalized voice amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSeries {
    pub chunk_ms: u32,
    pub values: Vec<f64>,
    pub source_duration_ms: u64,
}

impl AmplitudeSeries {
    pub fn from_track(track: &AudioTrack, chunk_ms: u32) -> Result<Self> {
        let raw = chunk_audio(track, chunk_ms)?;
        Ok(Self {
            chunk_ms,
            values: normalize_amplitudes(&raw)?,
            source_duration_ms: track.duration_ms(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `chunk_index,start_ms,amplitude` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "chunk_index,start_ms,amplitude")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{:.6}", i, i as u64 * self.chunk_ms as u64, v)?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut starts = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in reader.deserialize::<(usize, u64, f64)>().enumerate() {
            let (index, start, value) = rec?;
            if index != row {
                return Err(Error::MalformedCsv(format!(
                    "chunk_index {index} at row {row}, expected {row}"
                )));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Unnormalized(value));
            }
            starts.push(start);
            values.push(value);
        }
        if values.is_empty() {
            return Err(Error::EmptyInput("amplitude csv"));
        }
        let chunk_ms = match starts.as_slice() {
            [_, second, ..] => u32::try_from(*second)
                .map_err(|_| Error::MalformedCsv("chunk start out of range".into()))?,
            _ => DEFAULT_CHUNK_MS,
        };
        if chunk_ms == 0 {
            return Err(Error::InvalidChunkSize);
        }
        Ok(Self {
            chunk_ms,
            source_duration_ms: values.len() as u64 * chunk_ms as u64,
            values,
        })
    }
}

/// Square grayscale frame with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub timestamp_ms: u64,
}

impl Frame {
    pub fn side(&self) -> usize {
        self.width
    }
}

/// Resizes to `side`×`side` (bilinear) and reduces to luma in [0, 1].
pub fn preprocess_image(img: &DynamicImage, side: usize) -> Vec<f32> {
    let rgb: Rgb32FImage = img.to_rgb32f();
    let s = side as u32;
    let rgb = if rgb.width() == s && rgb.height() == s {
        rgb
    } else {
        image::imageops::resize(&rgb, s, s, FilterType::Triangle)
    };
    rgb.pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            let y = LUMA_WEIGHTS[0] * r as f64 + LUMA_WEIGHTS[1] * g as f64 + LUMA_WEIGHTS[2] * b as f64;
            y.clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// Decodes an encoded image (PNG) and preprocesses it like [`load_frames`].
pub fn decode_frame(bytes: &[u8], side: usize) -> Result<Vec<f32>> {
    let img = image::load_from_memory(bytes)?;
    Ok(preprocess_image(&img, side))
}

pub fn frame_timestamp_ms(index: usize, fps: u32) -> u64 {
    (index as f64 * 1000.0 / fps as f64).round() as u64
}

/// PNG files of `dir` in lexicographic order.
pub fn list_frame_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_frames(dir: impl AsRef<Path>, fps: u32, side: usize) -> Result<Vec<Frame>> {
    let dir = dir.as_ref();
    if fps == 0 || side == 0 {
        return Err(Error::InvalidArgument("fps and side must be positive".into()));
    }
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let img = image::open(path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            Ok(Frame {
                pixels: preprocess_image(&img, side),
                width: side,
                height: side,
                timestamp_ms: frame_timestamp_ms(i, fps),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn track(samples: Vec<f32>, rate: u32) -> AudioTrack {
        AudioTrack::new(samples, rate).unwrap()
    }

    #[test]
    fn constant_signal_chunks() {
        let t = track(vec![0.5; 8000], 8000);
        assert_eq!(t.duration_ms(), 1000);
        let chunks = chunk_audio(&t, 250).unwrap();
        assert_eq!(chunks.len(), 4);
        for c in chunks {
            assert!((c - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_chunks() {
        let t = track(vec![0.0; 4000], 8000);
        assert_eq!(chunk_audio(&t, 250).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn square_wave_chunk_means() {
        for rate in [8000u32, 11025, 44100] {
            let n = rate as usize * 3 / 2 + 17;
            let samples: Vec<f32> = (0..n).map(|i| if i % 2 == 0 { 0.8 } else { -0.8 }).collect();
            let t = track(samples.clone(), rate);
            let chunks = chunk_audio(&t, 250).unwrap();
            // Independent per-chunk mean using time membership of each sample.
            let mut sums = vec![0.0f64; chunks.len()];
            let mut counts = vec![0usize; chunks.len()];
            for (i, s) in samples.iter().enumerate() {
                let t_ms = i as f64 * 1000.0 / rate as f64;
                let idx = (t_ms / 250.0 + 1e-9).floor() as usize;
                sums[idx] += (*s as f64).abs();
                counts[idx] += 1;
            }
            for (k, c) in chunks.iter().enumerate() {
                assert!((c - sums[k] / counts[k] as f64).abs() < 1e-9);
                assert!((c - 0.8).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn chunk_errors() {
        let empty = track(vec![], 8000);
        assert!(matches!(chunk_audio(&empty, 250), Err(Error::EmptyAudio)));
        assert_eq!(chunk_audio(&empty, 250).unwrap_err().to_string(), "empty audio");
        let t = track(vec![0.1; 10], 8000);
        assert_eq!(chunk_audio(&t, 0).unwrap_err().to_string(), "invalid chunk size");
    }

    #[test]
    fn partial_chunk_kept() {
        let t = track(vec![0.2; 2001], 8000);
        let chunks = chunk_audio(&t, 250).unwrap();
        assert_eq!(chunks.len(), 2);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_amplitudes(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_amplitudes(&[3.0, 3.0, 3.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        let v = normalize_amplitudes(&[0.0, 1.0, 4.0]).unwrap();
        let oracle: Vec<f64> = [0.0, 1.0, 4.0].iter().map(|x| (x - 0.0) / (4.0 - 0.0)).collect();
        assert_eq!(v, oracle);
        assert!(normalize_amplitudes(&[]).is_err());
    }

    #[test]
    fn noise_gate_examples() {
        let t = track(vec![0.01, 0.9], 8000);
        assert_eq!(noise_gate(&t, 0.0).unwrap(), t);
        assert_eq!(noise_gate(&t, 0.1).unwrap().samples(), &[0.0, 0.9]);
        let z = track(vec![0.0; 16], 8000);
        assert_eq!(noise_gate(&z, 0.5).unwrap(), z);
        assert!(noise_gate(&t, 1.0).is_err());
        assert!(noise_gate(&t, -0.1).is_err());
    }

    #[test]
    fn stereo_downmix() {
        let t = AudioTrack::from_interleaved(&[1.0, 0.0, -0.5, 0.5], 2, 100).unwrap();
        assert_eq!(t.samples(), &[0.5, 0.0]);
    }

    #[test]
    fn wav_formats_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (bits, fmt) in [
            (8u16, hound::SampleFormat::Int),
            (16, hound::SampleFormat::Int),
            (24, hound::SampleFormat::Int),
            (32, hound::SampleFormat::Float),
        ] {
            let path = dir.path().join(format!("t{bits}.wav"));
            let spec = hound::WavSpec {
                channels: 2,
                sample_rate: 8000,
                bits_per_sample: bits,
                sample_format: fmt,
            };
            let mut w = hound::WavWriter::create(&path, spec).unwrap();
            for _ in 0..800 {
                match fmt {
                    hound::SampleFormat::Float => {
                        w.write_sample(0.5f32).unwrap();
                        w.write_sample(-0.5f32).unwrap();
                    }
                    hound::SampleFormat::Int => {
                        let half = 1i32 << (bits - 2);
                        w.write_sample(half).unwrap();
                        w.write_sample(half).unwrap();
                    }
                }
            }
            w.finalize().unwrap();
            let t = read_wav(&path).unwrap();
            assert_eq!(t.sample_rate(), 8000);
            assert_eq!(t.samples().len(), 800);
            assert_eq!(t.duration_ms(), 100);
            let expect = if fmt == hound::SampleFormat::Float { 0.0 } else { 0.5 };
            assert!((t.samples()[0] - expect).abs() < 1e-6, "{bits}: {}", t.samples()[0]);
        }
    }

    fn write_png(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) {
        RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y))).save(path).unwrap();
    }

    #[test]
    fn white_and_red_frames() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("000.png"), 300, 200, |_, _| [255, 255, 255]);
        write_png(&dir.path().join("001.png"), 64, 64, |_, _| [255, 0, 0]);
        let frames = load_frames(dir.path(), 4, 64).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames[0].pixels.iter().all(|&p| (p - 1.0).abs() < 1e-6));
        assert!(frames[1].pixels.iter().all(|&p| (p as f64 - 0.299).abs() < 1e-6));
        assert_eq!(frames[1].timestamp_ms, 250);
    }

    #[test]
    fn checkerboard_downsized() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 512, 512, |x, y| {
            if (x + y) % 2 == 0 { [255; 3] } else { [0; 3] }
        });
        let frames = load_frames(dir.path(), 4, 256).unwrap();
        let f = &frames[0];
        assert_eq!((f.width, f.height), (256, 256));
        assert_eq!(f.pixels.len(), 256 * 256);
        assert!(f.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let again = load_frames(dir.path(), 4, 256).unwrap();
        assert_eq!(frames, again);
    }

    #[test]
    fn frame_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frames(dir.path(), 4, 32), Err(Error::NoFrames(_))));
        fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        let err = load_frames(dir.path(), 4, 32).unwrap_err();
        assert!(err.to_string().contains("bad.png"), "{err}");
    }

    #[test]
    fn lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("b.png"), 8, 8, |_, _| [0, 0, 0]);
        write_png(&dir.path().join("a.png"), 8, 8, |_, _| [255, 255, 255]);
        let frames = load_frames(dir.path(), 4, 32).unwrap();
        assert!(frames[0].pixels[0] > 0.99);
        assert!(frames[1].pixels[0] < 0.01);
    }

    #[test]
    fn amplitude_csv_format() {
        let series = AmplitudeSeries {
            chunk_ms: 250,
            values: vec![0.0, 0.5, 1.0],
            source_duration_ms: 750,
        };
        let mut out = Vec::new();
        series.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "chunk_index,start_ms,amplitude\n0,0,0.000000\n1,250,0.500000\n2,500,1.000000\n"
        );
    }

    proptest! {
        #[test]
        fn chunks_partition_track(len in 1usize..5000, rate in 1u32..48000, chunk in 1u32..1000) {
            prop_assume!(rate as u64 * chunk as u64 >= 1000);
            let total: usize = chunk_bounds(len, rate, chunk).map(|(s, e)| e - s).sum();
            prop_assert_eq!(total, len);
            prop_assert!(chunk_bounds(len, rate, chunk).all(|(s, e)| e > s));
            let t = AudioTrack::new(vec![0.25; len], rate).unwrap();
            let n = chunk_audio(&t, chunk).unwrap().len();
            let exact = (len as u64 * 1000).div_ceil(rate as u64 * chunk as u64) as usize;
            prop_assert_eq!(n, exact);
        }

        #[test]
        fn normalization_affine_invariant(
            raw in proptest::collection::vec(0.0f64..1.0, 2..50),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            prop_assume!(hi - lo > 0.1);
            let base = normalize_amplitudes(&raw).unwrap();
            let moved: Vec<f64> = raw.iter().map(|v| a * v + b).collect();
            let other = normalize_amplitudes(&moved).unwrap();
            for (x, y) in base.iter().zip(&other) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(base.iter().any(|&v| v == 0.0));
            prop_assert!(base.iter().any(|&v| v == 1.0));
        }

        #[test]
        fn gray_rgb_keeps_channel(v in 0u8..=255) {
            let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(4, 4, Rgb([v, v, v])));
            let px = preprocess_image(&img, 4);
            prop_assert!(px.iter().all(|&p| (p as f64 - v as f64 / 255.0).abs() < 1e-6));
        }
    }
}
