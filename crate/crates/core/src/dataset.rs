//! Sliding-window training samples and their binary container.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "PEMD" | u32 version=1 | u32 side | u64 n
//! n × ( u32 id_len | id bytes (UTF-8) | u32 end_frame_index
//!       | 4·side·side f32 pixels | f32 label )
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ingest::Frame;
use crate::labels::AffectLabelSeries;
use crate::{Error, Result, STACK_DEPTH};

pub const DATASET_MAGIC: &[u8; 4] = b"PEMD";
pub const DATASET_VERSION: u32 = 1;

/// Which label(s) of the window a sample is trained on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAlignment {
    /// Label of the newest frame in the window.
    #[default]
    Last,
    First,
    Mean,
}

/// Four consecutive grayscale frames of one video and a label.
///
/// Frames are shared between overlapping windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStackSample {
    pub frames: [Arc<[f32]>; STACK_DEPTH],
    pub label: f32,
    pub video_id: Arc<str>,
    pub end_frame_index: u32,
}

impl FrameStackSample {
    /// Contiguous `4 × side × side` tensor, oldest frame first.
    pub fn stack(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.frames.iter().map(|f| f.len()).sum());
        for f in &self.frames {
            out.extend_from_slice(f);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub id: String,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<VideoSummary>,
    /// Skipped videos and truncations. Not persisted by [`Dataset::save`].
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub side: usize,
    pub samples: Vec<FrameStackSample>,
    pub manifest: Manifest,
}

impl PartialEq for Dataset {
    /// Notes are build diagnostics and are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.side == other.side
            && self.samples == other.samples
            && self.manifest.videos == other.manifest.videos
    }
}

/// One video's frames and frame-aligned labels.
#[derive(Debug, Clone)]
pub struct VideoInput {
    pub id: String,
    pub frames: Vec<Frame>,
    pub labels: AffectLabelSeries,
}

impl VideoInput {
    /// Truncates frames and labels to the shorter of the two. Frame `i`
    /// pairs with chunk `i`. Returns a note when anything was dropped.
    pub fn aligned(id: impl Into<String>, mut frames: Vec<Frame>, mut labels: AffectLabelSeries) -> (Self, Option<String>) {
        let id = id.into();
        let n = frames.len().min(labels.values.len());
        let note = (frames.len() != labels.values.len()).then(|| {
            format!(
                "video {id}: truncated {} frames / {} labels to {n}",
                frames.len(),
                labels.values.len()
            )
        });
        frames.truncate(n);
        labels.values.truncate(n);
        (Self { id, frames, labels }, note)
    }
}

/// Builds stride-1 windows over every video, in video then frame order.
pub fn build(videos: &[VideoInput], alignment: LabelAlignment) -> Result<Dataset> {
    let mut side = None;
    let mut samples = Vec::new();
    let mut manifest = Manifest::default();
    for video in videos {
        if video.frames.len() != video.labels.values.len() {
            return Err(Error::LengthMismatch {
                video: video.id.clone(),
                frames: video.frames.len(),
                labels: video.labels.values.len(),
            });
        }
        if video.frames.len() < STACK_DEPTH {
            let note = format!(
                "video {}: skipped, {} frames (< {STACK_DEPTH})",
                video.id,
                video.frames.len()
            );
            log::warn!("{note}");
            manifest.notes.push(note);
            continue;
        }
        for f in &video.frames {
            if f.width != f.height || f.pixels.len() != f.width * f.height {
                return Err(Error::InvalidArgument(format!("video {}: frame is not square", video.id)));
            }
            match side {
                None => side = Some(f.width),
                Some(s) if s != f.width => {
                    return Err(Error::ShapeMismatch {
                        expected: vec![s, s],
                        actual: vec![f.width, f.height],
                    })
                }
                _ => {}
            }
        }
        let shared: Vec<Arc<[f32]>> = video.frames.iter().map(|f| Arc::from(f.pixels.as_slice())).collect();
        let id: Arc<str> = Arc::from(video.id.as_str());
        let labels = &video.labels.values;
        let before = samples.len();
        for end in STACK_DEPTH - 1..shared.len() {
            let start = end + 1 - STACK_DEPTH;
            let label = match alignment {
                LabelAlignment::Last => labels[end],
                LabelAlignment::First => labels[start],
                LabelAlignment::Mean => labels[start..=end].iter().sum::<f64>() / STACK_DEPTH as f64,
            };
            samples.push(FrameStackSample {
                frames: std::array::from_fn(|k| Arc::clone(&shared[start + k])),
                label: label as f32,
                video_id: Arc::clone(&id),
                end_frame_index: end as u32,
            });
        }
        manifest.videos.push(VideoSummary {
            id: video.id.clone(),
            samples: samples.len() - before,
        });
    }
    Ok(Dataset {
        side: side.unwrap_or(0),
        samples,
        manifest,
    })
}

fn summarize(samples: &[FrameStackSample]) -> Vec<VideoSummary> {
    let mut videos: Vec<VideoSummary> = Vec::new();
    for s in samples {
        match videos.last_mut() {
            Some(v) if *v.id == *s.video_id => v.samples += 1,
            _ => videos.push(VideoSummary {
                id: s.video_id.to_string(),
                samples: 1,
            }),
        }
    }
    videos
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.manifest.videos.iter().map(|v| v.id.as_str()).collect()
    }

    fn subset(&self, keep: impl Fn(&FrameStackSample) -> bool) -> Dataset {
        let samples: Vec<_> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        Dataset {
            side: self.side,
            manifest: Manifest {
                videos: summarize(&samples),
                notes: Vec::new(),
            },
            samples,
        }
    }

    /// Splits by whole video: samples of `holdout` videos go to the second set.
    pub fn split(&self, holdout: &HashSet<String>) -> Result<(Dataset, Dataset)> {
        let known: HashSet<&str> = self.video_ids().into_iter().collect();
        let mut unknown: Vec<&String> = holdout.iter().filter(|id| !known.contains(id.as_str())).collect();
        unknown.sort();
        if let Some(id) = unknown.first() {
            return Err(Error::UnknownVideo((*id).clone()));
        }
        let train = self.subset(|s| !holdout.contains(&*s.video_id));
        let eval = self.subset(|s| holdout.contains(&*s.video_id));
        Ok((train, eval))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let side = u32::try_from(self.side).map_err(|_| Error::InvalidArgument("side too large".into()))?;
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&side.to_le_bytes())?;
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let plane = self.side * self.side;
        let mut buf = Vec::with_capacity(4 * plane * STACK_DEPTH);
        for s in &self.samples {
            let id = s.video_id.as_bytes();
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id)?;
            out.write_all(&s.end_frame_index.to_le_bytes())?;
            buf.clear();
            for f in &s.frames {
                if f.len() != plane {
                    return Err(Error::ShapeMismatch {
                        expected: vec![plane],
                        actual: vec![f.len()],
                    });
                }
                for p in f.iter() {
                    buf.extend_from_slice(&p.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
            out.write_all(&s.label.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut input = BufReader::new(File::open(path.as_ref())?);
        Self::read_from(&mut input)
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Dataset> {
        let mut magic = [0u8; 4];
        read_exact(input, &mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::BadMagic { expected: "PEMD" });
        }
        let version = read_u32(input)?;
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let side = read_u32(input)? as usize;
        let n = read_u64(input)?;
        let plane = side
            .checked_mul(side)
            .ok_or_else(|| Error::MalformedDataset("side overflows".into()))?;
        let mut samples = Vec::new();
        let mut pixel_bytes = vec![0u8; 4 * plane];
        for _ in 0..n {
            let id_len = read_u32(input)? as usize;
            let mut id = vec![0u8; id_len.min(1 << 16)];
            if id_len > id.len() {
                return Err(Error::MalformedDataset(format!("video id length {id_len}")));
            }
            read_exact(input, &mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::MalformedDataset("video id is not UTF-8".into()))?;
            let end_frame_index = read_u32(input)?;
            let mut stack: Vec<Arc<[f32]>> = Vec::with_capacity(STACK_DEPTH);
            for _ in 0..STACK_DEPTH {
                read_exact(input, &mut pixel_bytes)?;
                let px: Vec<f32> = pixel_bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                stack.push(Arc::from(px));
            }
            let mut label = [0u8; 4];
            read_exact(input, &mut label)?;
            let video_id: Arc<str> = match samples.last() {
                Some(FrameStackSample { video_id, .. }) if **video_id == *id => Arc::clone(video_id),
                _ => Arc::from(id),
            };
            let frames: [Arc<[f32]>; STACK_DEPTH] = stack.try_into().expect("stack depth");
            samples.push(FrameStackSample {
                frames,
                label: f32::from_le_bytes(label),
                video_id,
                end_frame_index,
            });
        }
        Ok(Dataset {
            side,
            manifest: Manifest {
                videos: summarize(&samples),
                notes: Vec::new(),
            },
            samples,
        })
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedDataset,
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
