//! Transcription backends.

use std::io::{Cursor, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use ites_core::session::{TranscriptionBackend, TranscriptionRequest};

use crate::bundle::Audio;
use crate::formats::Utterance;

/// Returns the scripted utterances whose midpoint falls inside the segment,
/// joined in script order. Deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptBackend {
    pub utterances: Vec<Utterance>,
}

impl TranscriptionBackend for ScriptBackend {
    fn transcribe(&self, request: &TranscriptionRequest) -> Result<String, String> {
        let span = request.seconds();
        let texts: Vec<&str> = self
            .utterances
            .iter()
            .filter(|u| span.contains(&((u.start + u.end) / 2.0)))
            .map(|u| u.text.trim())
            .collect();
        if texts.is_empty() {
            Err(format!("no scripted speech in {:.2}-{:.2} s", span.start, span.end))
        } else {
            Ok(texts.join(" "))
        }
    }
}

/// External speech service adapter: runs a program with the segment's audio
/// as a 16-bit mono WAV on stdin and takes its stdout as the transcript.
/// Point it at a wrapper script for whichever cloud service is in use.
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub audio: Audio,
}

impl CommandBackend {
    fn wav_slice(&self, request: &TranscriptionRequest) -> Result<Vec<u8>, String> {
        let range = request.samples.clone().ok_or("bundle has no audio")?;
        let mut reader = hound::WavReader::open(&self.audio.path).map_err(|e| e.to_string())?;
        reader.seek(range.start as u32).map_err(|e| e.to_string())?;
        let spec = reader.spec();
        let mut out = Cursor::new(Vec::new());
        let mut writer = hound::WavWriter::new(&mut out, spec).map_err(|e| e.to_string())?;
        for s in reader.samples::<i16>().take(range.len()) {
            writer.write_sample(s.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        }
        writer.finalize().map_err(|e| e.to_string())?;
        Ok(out.into_inner())
    }
}

impl TranscriptionBackend for CommandBackend {
    fn transcribe(&self, request: &TranscriptionRequest) -> Result<String, String> {
        let wav = self.wav_slice(request)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("{}: {e}", self.program.display()))?;
        child.stdin.take().expect("piped").write_all(&wav).map_err(|e| e.to_string())?;
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            let err = String::from_utf8_lossy(&out.stderr);
            return Err(format!("{} exited with {}: {}", self.program.display(), out.status, err.trim()));
        }
        let text = String::from_utf8(out.stdout).map_err(|_| "transcript is not UTF-8".to_string())?;
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

/// Used when a bundle has neither a script nor audio for an external service.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoBackend;

impl TranscriptionBackend for NoBackend {
    fn transcribe(&self, _: &TranscriptionRequest) -> Result<String, String> {
        Err("no transcription backend configured".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(frames: std::ops::Range<usize>) -> TranscriptionRequest {
        TranscriptionRequest { segment: 0, frames, video_rate: 10.0, samples: None, audio_rate: None }
    }

    #[test]
    fn script_uses_midpoints() {
        let u = |start, end, text: &str| Utterance { start, end, text: text.into() };
        let b = ScriptBackend { utterances: vec![u(0.0, 1.0, "Grab the cup."), u(0.9, 2.4, "Lift it."), u(2.5, 3.0, "Stop.")] };
        assert_eq!(b.transcribe(&req(0..10)).unwrap(), "Grab the cup.");
        assert_eq!(b.transcribe(&req(0..20)).unwrap(), "Grab the cup. Lift it.");
        assert!(b.transcribe(&req(30..40)).is_err());
    }

    #[test]
    fn command_backend_needs_audio() {
        let b = CommandBackend {
            program: "true".into(),
            args: vec![],
            audio: Audio { path: "missing.wav".into(), rate: 16_000.0, samples: 0 },
        };
        assert_eq!(b.transcribe(&req(0..10)).unwrap_err(), "bundle has no audio");
    }

    #[cfg(unix)]
    #[test]
    fn command_backend_reads_stdout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..8000 {
            w.write_sample((i % 100) as i16).unwrap();
        }
        w.finalize().unwrap();
        let b = CommandBackend {
            program: "sh".into(),
            args: vec!["-c".into(), "wc -c | tr -d ' '".into()],
            audio: Audio { path, rate: 8000.0, samples: 8000 },
        };
        let mut r = req(0..10);
        r.samples = Some(100..900);
        assert_eq!(b.transcribe(&r).unwrap(), (44 + 800 * 2).to_string());
    }
}
