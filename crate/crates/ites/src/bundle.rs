//! Demonstration bundles: a directory holding `manifest.toml`, the frame
//! files and the side files produced by external detectors.

use std::fs;
use std::path::{Path, PathBuf};

use ites_core::segmentation::{MotionAccumulator, MotionSignal};
use ites_core::session::DemoInfo;
use ites_core::skillparams::CameraIntrinsics;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

pub const MANIFEST: &str = "manifest.toml";

/// Camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// `manifest.toml`. Paths are relative to the bundle directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub id: Option<String>,
    /// Frames per second.
    pub video_rate: Option<f64>,
    /// Samples per second; required when `audio` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio: Option<PathBuf>,
    /// Utterance script `start,end,text` for the scripted transcription backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcripts: Option<PathBuf>,
    /// Detection tracks `frame,kind,x,y,z,confidence`, absolute frame indices.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<PathBuf>,
    /// Grasp classifier output `frame,grasp,probability`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_scores: Option<PathBuf>,
    /// Object vocabulary, one name per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objects: Option<PathBuf>,
    /// Grasp priors `object,grasp,probability`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_priors: Option<PathBuf>,
    /// Precomputed motion signal, one value per line, used instead of the frames.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_signal: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default)]
    pub frames: Vec<PathBuf>,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Audio track reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub path: PathBuf,
    pub rate: f64,
    pub samples: usize,
}

/// A validated bundle with every path resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub id: String,
    pub video_rate: f64,
    pub frames: Vec<PathBuf>,
    pub audio: Option<Audio>,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Bundle {
    pub fn open(dir: impl AsRef<Path>) -> Result<Bundle> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::BundleNotFound(dir.to_path_buf()));
        }
        let dir = dir.canonicalize().map_err(Error::io(dir))?;
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::bundle("manifest", format!("{MANIFEST} missing in {}", dir.display())));
        }
        let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::bundle("manifest", e.message()))?;
        Bundle::validate(dir, manifest)
    }

    fn validate(dir: PathBuf, manifest: Manifest) -> Result<Bundle> {
        let id = manifest.id.clone().ok_or_else(|| Error::bundle("id", "missing"))?;
        if id.is_empty() || id.chars().any(|c| c.is_control()) {
            return Err(Error::bundle("id", "must be a non-empty single line"));
        }
        let video_rate = positive("video_rate", manifest.video_rate)?;
        if manifest.frames.is_empty() {
            return Err(Error::bundle("frames", "empty frame list"));
        }
        if manifest.frames.len() < 2 {
            return Err(Error::bundle("frames", "at least two frames required"));
        }
        let resolve = |field: &str, p: &Path| -> Result<PathBuf> {
            let full = dir.join(p);
            if full.is_file() {
                Ok(full)
            } else {
                Err(Error::bundle(field, format!("file not found: {}", p.display())))
            }
        };
        let frames = manifest.frames.iter().map(|p| resolve("frames", p)).collect::<Result<Vec<_>>>()?;
        for p in &manifest.detections {
            resolve("detections", p)?;
        }
        for (field, p) in [
            ("transcripts", &manifest.transcripts),
            ("grasp_scores", &manifest.grasp_scores),
            ("objects", &manifest.objects),
            ("grasp_priors", &manifest.grasp_priors),
            ("motion_signal", &manifest.motion_signal),
        ] {
            if let Some(p) = p {
                resolve(field, p)?;
            }
        }
        let audio = match (&manifest.audio, manifest.audio_rate) {
            (None, None) => None,
            (None, Some(_)) => return Err(Error::bundle("audio_rate", "set without `audio`")),
            (Some(_), None) => return Err(Error::bundle("audio_rate", "required with `audio`")),
            (Some(p), Some(rate)) => {
                let rate = positive("audio_rate", Some(rate))?;
                let path = resolve("audio", p)?;
                let (samples, actual) =
                    formats::wav_info(&path).map_err(|e| Error::bundle("audio", e.to_string()))?;
                if actual != rate {
                    return Err(Error::bundle("audio_rate", format!("{rate} does not match the WAV header ({actual})")));
                }
                Some(Audio { path, rate, samples })
            }
        };
        let intrinsics = match manifest.intrinsics {
            None => None,
            Some(k) => Some(
                CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)
                    .ok_or_else(|| Error::bundle("intrinsics", "focal lengths must be positive and finite"))?,
            ),
        };
        Ok(Bundle { dir, manifest, id, video_rate, frames, audio, intrinsics })
    }

    pub fn info(&self) -> DemoInfo {
        DemoInfo {
            frame_count: self.frames.len(),
            video_rate: self.video_rate,
            audio: self.audio.as_ref().map(|a| (a.samples, a.rate)),
        }
    }

    /// Frame `i` timestamp in seconds.
    pub fn frame_time(&self, i: usize) -> f64 {
        i as f64 / self.video_rate
    }

    pub fn path(&self, relative: &Path) -> PathBuf {
        self.dir.join(relative)
    }

    /// The motion signal: the precomputed one when the manifest names it,
    /// otherwise computed from the frames.
    pub fn motion_signal(&self, window: usize) -> Result<MotionSignal> {
        match &self.manifest.motion_signal {
            Some(p) => {
                let path = self.path(p);
                let values = formats::read_motion(&path)?;
                if values.len() + 1 != self.frames.len() {
                    return Err(Error::bundle(
                        "motion_signal",
                        format!("{} values for {} frames, expected {}", values.len(), self.frames.len(), self.frames.len() - 1),
                    ));
                }
                Ok(MotionSignal::new(values, self.video_rate)?)
            }
            None => self.frame_signal(window),
        }
    }

    /// Motion signal computed from the frame files, streamed one frame at a time.
    pub fn frame_signal(&self, window: usize) -> Result<MotionSignal> {
        let mut acc = MotionAccumulator::new(window);
        for (i, p) in self.frames.iter().enumerate() {
            let frame = formats::read_frame(p, self.frame_time(i))?;
            acc.push(&frame).map_err(|e| Error::format(p, 0, e.to_string()))?;
        }
        let signal = acc.finish()?;
        Ok(MotionSignal::new(signal.values, self.video_rate)?)
    }
}

fn positive(field: &str, v: Option<f64>) -> Result<f64> {
    match v {
        None => Err(Error::bundle(field, "missing")),
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(Error::bundle(field, format!("must be positive, got {v}"))),
    }
}
