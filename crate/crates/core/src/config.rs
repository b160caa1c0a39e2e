//! Run configuration shared by every pipeline step.
//!
//! Loaded from one JSON file; every field has a default so a partial file
//! (or `{}`) is valid. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "paths": {
//!     "videos": [{"id": "v1", "wav": "v1.wav", "frames": "v1_frames"}],
//!     "holdout": ["v1"],
//!     "dataset": "work/train.pemd",
//!     "model": "work/model.pemw"
//!   },
//!   "chunk_ms": 250, "fps": 4, "side": 256, "window": 8,
//!   "seed": 0,
//!   "demux": ["ffmpeg", "-i", "{video}", "-ac", "1", "{wav}"]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::LabelAlignment;
use crate::model::ModelConfig;
use crate::physio::{EdaParams, PpgParams};
use crate::{Error, Result};

/// One recording: pre-demuxed audio and frames, or a video to demux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSource {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video: Option<PathBuf>,
    pub wav: PathBuf,
    pub frames: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub videos: Vec<VideoSource>,
    /// Video ids excluded from training.
    pub holdout: Vec<String>,
    pub dataset: PathBuf,
    pub model: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            videos: Vec::new(),
            holdout: Vec::new(),
            dataset: PathBuf::from("dataset.pemd"),
            model: PathBuf::from("model.pemw"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub chunk_ms: u32,
    pub fps: u32,
    pub side: usize,
    /// Moving-average window over affect labels, in chunks.
    pub window: usize,
    /// Noise gate threshold as a fraction of peak; 0 disables it.
    pub noise_gate: f64,
    pub alignment: LabelAlignment,
    /// Network and optimizer. `side` and `seed` are taken from the
    /// top-level fields.
    pub model: ModelConfig,
    pub eda: EdaParams,
    pub ppg: PpgParams,
    pub seed: u64,
    /// External demux command; `{video}`, `{wav}`, `{frames}` and `{fps}`
    /// are substituted in each argument.
    pub demux: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            chunk_ms: 250,
            fps: 4,
            side: 256,
            window: 8,
            noise_gate: 0.0,
            alignment: LabelAlignment::Last,
            model: ModelConfig::default(),
            eda: EdaParams::default(),
            ppg: PpgParams::default(),
            seed: 0,
            demux: Vec::new(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Model config with the run's side and seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            side: self.side,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.chunk_ms > 0, || "chunk_ms must be positive".into())?;
        check(self.fps > 0, || "fps must be positive".into())?;
        check(self.side > 0, || "side must be positive".into())?;
        check(self.window > 0, || "window must be at least 1".into())?;
        check((0.0..1.0).contains(&self.noise_gate), || {
            format!("noise_gate {} must be in [0, 1)", self.noise_gate)
        })?;
        self.model_config().validate()?;

        let e = &self.eda;
        positive("eda.denoise_cutoff_hz", e.denoise_cutoff_hz)?;
        positive("eda.tonic_cutoff_hz", e.tonic_cutoff_hz)?;
        check(e.tonic_cutoff_hz < e.denoise_cutoff_hz, || "eda.tonic_cutoff_hz must be below eda.denoise_cutoff_hz".into())?;
        check(e.denoise_order > 0 && e.tonic_order > 0, || "eda filter orders must be positive".into())?;
        check(e.scr_prominence.is_finite() && e.scr_prominence >= 0.0, || "eda.scr_prominence must be non-negative".into())?;
        positive("eda.scr_min_separation_s", e.scr_min_separation_s)?;
        positive("eda.min_segment_s", e.min_segment_s)?;

        let p = &self.ppg;
        positive("ppg.band_low_hz", p.band_low_hz)?;
        check(p.band_high_hz > p.band_low_hz, || "ppg.band_high_hz must exceed ppg.band_low_hz".into())?;
        check(p.order > 0, || "ppg.order must be positive".into())?;
        positive("ppg.min_beat_spacing_ms", p.min_beat_spacing_ms)?;
        positive("ppg.min_nn_ms", p.min_nn_ms)?;
        check(p.max_nn_ms > p.min_nn_ms, || "ppg.max_nn_ms must exceed ppg.min_nn_ms".into())?;

        let mut ids = std::collections::HashSet::new();
        for v in &self.paths.videos {
            check(!v.id.is_empty(), || "video id must not be empty".into())?;
            check(ids.insert(v.id.as_str()), || format!("duplicate video id {}", v.id))?;
        }
        for h in &self.paths.holdout {
            check(ids.contains(h.as_str()), || format!("holdout id {h} is not a configured video"))?;
        }
        Ok(())
    }

    /// The demux command for one video, or `None` if no template is set.
    pub fn demux_command(&self, source: &VideoSource) -> Result<Option<Vec<String>>> {
        if self.demux.is_empty() {
            return Ok(None);
        }
        let video = source
            .video
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("video {} has no video path to demux", source.id)))?;
        let fps = self.fps.to_string();
        let argv = self
            .demux
            .iter()
            .map(|arg| {
                arg.replace("{video}", &video.to_string_lossy())
                    .replace("{wav}", &source.wav.to_string_lossy())
                    .replace("{frames}", &source.frames.to_string_lossy())
                    .replace("{fps}", &fps)
            })
            .collect();
        Ok(Some(argv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.chunk_ms, c.fps, c.side, c.window), (250, 4, 256, 8));
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let empty: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(empty, c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"chunk":1}"#).is_err());
        for patch in [
            r#"{"chunk_ms":0}"#,
            r#"{"window":0}"#,
            r#"{"noise_gate":1.0}"#,
            r#"{"side":64}"#,
            r#"{"ppg":{"band_low_hz":9.0}}"#,
            r#"{"eda":{"tonic_cutoff_hz":5.0}}"#,
            r#"{"paths":{"videos":[{"id":"a","wav":"a","frames":"a"}],"holdout":["b"]}}"#,
        ] {
            let c: RunConfig = serde_json::from_str(patch).unwrap();
            assert!(c.validate().is_err(), "{patch}");
        }
    }

    #[test]
    fn model_config_takes_run_side_and_seed() {
        let c = RunConfig {
            side: 64,
            seed: 9,
            model: ModelConfig::compact(32),
            ..RunConfig::default()
        };
        c.validate().unwrap();
        let m = c.model_config();
        assert_eq!((m.side, m.seed), (64, 9));
    }

    #[test]
    fn demux_template() {
        let c = RunConfig {
            demux: vec!["tool".into(), "{video}".into(), "-r{fps}".into(), "{wav}".into(), "{frames}/%05d.png".into()],
            ..RunConfig::default()
        };
        let mut src = VideoSource {
            id: "v".into(),
            video: Some("in.mp4".into()),
            wav: "v.wav".into(),
            frames: "vf".into(),
        };
        assert_eq!(
            c.demux_command(&src).unwrap().unwrap(),
            vec!["tool", "in.mp4", "-r4", "v.wav", "vf/%05d.png"]
        );
        src.video = None;
        assert!(c.demux_command(&src).is_err());
        assert_eq!(RunConfig::default().demux_command(&src).unwrap(), None);
    }
}
