//! Review state machine.
//!
//! A session walks a demonstration through
//! `Created → Segmented → SegmentsConfirmed → Transcribed →
//! TranscriptsConfirmed → Compiled`, with `Failed` reachable from anywhere.
//! Every state change is appended to an audit log, and the log alone (plus
//! the compile inputs) reproduces the session: transcription results are
//! logged as records of their own, so replay never calls a backend.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::recognition::{ObjectNameParser, RecognitionError, Recognizer};
use crate::segmentation::{frame_to_sample, slice_segments, Segment, SegmentStatus};
use crate::skillparams::{
    extract_trajectory, fit_hinge, fuse_grasp_type, laterality_from_track, object_position_from_track, start_end_poses,
    CameraIntrinsics, DetectionTrack, GraspDistribution, HingeFitConfig, SkillError,
};
use crate::taskmodel::{validate_gmr, Hand, Metadata, SkillParameters, TaskLabel, TaskModel, TaskStep, Violation};
use crate::text::{escape_field, unescape_field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Created,
    Segmented,
    SegmentsConfirmed,
    Transcribed,
    TranscriptsConfirmed,
    Compiled,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Created,
        Phase::Segmented,
        Phase::SegmentsConfirmed,
        Phase::Transcribed,
        Phase::TranscriptsConfirmed,
        Phase::Compiled,
        Phase::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Created => "created",
            Phase::Segmented => "segmented",
            Phase::SegmentsConfirmed => "segments_confirmed",
            Phase::Transcribed => "transcribed",
            Phase::TranscriptsConfirmed => "transcripts_confirmed",
            Phase::Compiled => "compiled",
            Phase::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.iter().copied().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a session ended up in [`Phase::Failed`].
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Grammar(Vec<Violation>),
    Recognition { segment: usize, error: RecognitionError },
    Daemon { segment: usize, daemon: &'static str, error: SkillError },
    Discarded,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Grammar(v) => {
                f.write_str("GMR violation: ")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            Failure::Recognition { segment, error } => write!(f, "segment {segment}: {error}"),
            Failure::Daemon { segment, daemon, error } => write!(f, "segment {segment}: {daemon} daemon: {error}"),
            Failure::Discarded => f.write_str("session discarded"),
        }
    }
}

impl core::error::Error for Failure {}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    WrongPhase { op: &'static str, phase: Phase },
    OutOfRange { index: usize, len: usize },
    NotAdjacent { first: usize, second: usize },
    SegmentIgnored { index: usize },
    TooFewSegments { active: usize },
    NotTranscribed { index: usize },
    Compile(Failure),
    MissingCompileInputs,
    Log { line: usize, message: String },
}

impl fmt::Display for SessionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionError::WrongPhase { op, phase } => write!(f, "wrong phase: {op} not allowed in phase {phase}"),
            SessionError::OutOfRange { index, len } => write!(f, "segment {index} out of range (have {len})"),
            SessionError::NotAdjacent { first, second } => write!(f, "segments {first} and {second} not adjacent"),
            SessionError::SegmentIgnored { index } => write!(f, "segment {index} is ignored"),
            SessionError::TooFewSegments { active } => write!(f, "too few segments: {active} active, need at least 3"),
            SessionError::NotTranscribed { index } => write!(f, "segment {index} has no transcript record"),
            SessionError::Compile(failure) => write!(f, "compile failed: {failure}"),
            SessionError::MissingCompileInputs => f.write_str("compile inputs not available"),
            SessionError::Log { line, message } => write!(f, "audit log line {line}: {message}"),
        }
    }
}

impl core::error::Error for SessionError {}

/// One state change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditOp {
    Segment { stops: Vec<usize> },
    Merge { first: usize, second: usize },
    Ignore { index: usize },
    ConfirmSegments,
    Transcribed { index: usize, text: String },
    TranscriptionFailed { index: usize, message: String },
    SetTranscript { index: usize, text: String },
    ConfirmTranscripts,
    ReopenTranscripts,
    Compile,
    Revert,
    Discard,
}

impl AuditOp {
    pub fn name(&self) -> &'static str {
        match self {
            AuditOp::Segment { .. } => "segment",
            AuditOp::Merge { .. } => "merge",
            AuditOp::Ignore { .. } => "ignore",
            AuditOp::ConfirmSegments => "confirm_segments",
            AuditOp::Transcribed { .. } => "transcribed",
            AuditOp::TranscriptionFailed { .. } => "transcription_failed",
            AuditOp::SetTranscript { .. } => "set_transcript",
            AuditOp::ConfirmTranscripts => "confirm_transcripts",
            AuditOp::ReopenTranscripts => "reopen_transcripts",
            AuditOp::Compile => "compile",
            AuditOp::Revert => "revert",
            AuditOp::Discard => "discard",
        }
    }

    fn args(&self) -> Vec<String> {
        match self {
            AuditOp::Segment { stops } => {
                alloc::vec![stops.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")]
            }
            AuditOp::Merge { first, second } => alloc::vec![first.to_string(), second.to_string()],
            AuditOp::Ignore { index } => alloc::vec![index.to_string()],
            AuditOp::Transcribed { index, text } | AuditOp::SetTranscript { index, text } => {
                alloc::vec![index.to_string(), escape_field(text)]
            }
            AuditOp::TranscriptionFailed { index, message } => alloc::vec![index.to_string(), escape_field(message)],
            _ => Vec::new(),
        }
    }

    fn parse(op: &str, args: &[&str]) -> Result<AuditOp, String> {
        let index = |i: usize| -> Result<usize, String> {
            let s = args.get(i).ok_or_else(|| format!("{op}: missing argument {}", i + 1))?;
            s.parse().map_err(|_| format!("{op}: bad index {s:?}"))
        };
        let text = |i: usize| -> Result<String, String> {
            let s = args.get(i).ok_or_else(|| format!("{op}: missing argument {}", i + 1))?;
            unescape_field(s).ok_or_else(|| format!("{op}: bad escape in {s:?}"))
        };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("{op}: expected {n} arguments, got {}", args.len()))
            }
        };
        let parsed = match op {
            "segment" => {
                arity(1)?;
                let stops = if args[0].is_empty() {
                    Vec::new()
                } else {
                    args[0].split(',').map(|s| s.parse().map_err(|_| format!("segment: bad stop {s:?}"))).collect::<Result<_, _>>()?
                };
                AuditOp::Segment { stops }
            }
            "merge" => {
                arity(2)?;
                AuditOp::Merge { first: index(0)?, second: index(1)? }
            }
            "ignore" => {
                arity(1)?;
                AuditOp::Ignore { index: index(0)? }
            }
            "transcribed" => {
                arity(2)?;
                AuditOp::Transcribed { index: index(0)?, text: text(1)? }
            }
            "transcription_failed" => {
                arity(2)?;
                AuditOp::TranscriptionFailed { index: index(0)?, message: text(1)? }
            }
            "set_transcript" => {
                arity(2)?;
                AuditOp::SetTranscript { index: index(0)?, text: text(1)? }
            }
            "confirm_segments" => AuditOp::ConfirmSegments,
            "confirm_transcripts" => AuditOp::ConfirmTranscripts,
            "reopen_transcripts" => AuditOp::ReopenTranscripts,
            "compile" => AuditOp::Compile,
            "revert" => AuditOp::Revert,
            "discard" => AuditOp::Discard,
            other => return Err(format!("unknown op {other:?}")),
        };
        if !matches!(op, "segment" | "merge" | "ignore" | "transcribed" | "transcription_failed" | "set_transcript") {
            arity(0)?;
        }
        Ok(parsed)
    }
}

/// `timestamp<TAB>op<TAB>args…`, one per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub timestamp: String,
    pub op: AuditOp,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        let mut line = escape_field(&self.timestamp);
        line.push('\t');
        line.push_str(self.op.name());
        for a in self.op.args() {
            line.push('\t');
            line.push_str(&a);
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<AuditRecord, String> {
        let mut fields = line.split('\t');
        let ts = fields.next().unwrap_or_default();
        let timestamp = unescape_field(ts).ok_or_else(|| format!("bad escape in timestamp {ts:?}"))?;
        let op = fields.next().ok_or("missing op")?;
        let args: Vec<&str> = fields.collect();
        Ok(AuditRecord { timestamp, op: AuditOp::parse(op, &args)? })
    }
}

/// Renders a log, one record per line with a trailing newline.
pub fn audit_text(records: &[AuditRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses [`audit_text`] output. Blank lines are skipped.
pub fn parse_audit(text: &str) -> Result<Vec<AuditRecord>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| AuditRecord::parse_line(l).map_err(|message| SessionError::Log { line: i + 1, message }))
        .collect()
}

/// Fixed facts about the demonstration a session was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoInfo {
    pub frame_count: usize,
    pub video_rate: f64,
    /// Sample count and rate of the audio track, when there is one.
    pub audio: Option<(usize, f64)>,
}

/// What a transcription backend is asked to transcribe.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptionRequest {
    pub segment: usize,
    pub frames: Range<usize>,
    pub video_rate: f64,
    pub samples: Option<Range<usize>>,
    pub audio_rate: Option<f64>,
}

impl TranscriptionRequest {
    /// Time span of the segment in seconds.
    pub fn seconds(&self) -> Range<f64> {
        self.frames.start as f64 / self.video_rate..self.frames.end as f64 / self.video_rate
    }
}

pub trait TranscriptionBackend {
    fn transcribe(&self, request: &TranscriptionRequest) -> Result<String, String>;
}

/// Everything compile needs besides the session itself.
pub struct CompileContext<'a> {
    pub recognizer: &'a dyn Recognizer,
    pub objects: &'a dyn ObjectNameParser,
    pub detections: &'a DetectionTrack,
    pub intrinsics: CameraIntrinsics,
    /// Grasp-classifier output keyed by frame.
    pub grasp_scores: &'a BTreeMap<usize, GraspDistribution>,
    /// Grasp prior per object name.
    pub grasp_priors: &'a BTreeMap<String, GraspDistribution>,
    pub min_confidence: f64,
    pub hinge: HingeFitConfig,
    pub bundle_id: &'a str,
    pub tool_version: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    id: String,
    info: DemoInfo,
    phase: Phase,
    segments: Vec<Segment>,
    /// Backend error per segment, aligned with `segments`.
    flags: Vec<Option<String>>,
    model: Option<TaskModel>,
    failure: Option<(Failure, Phase)>,
    log: Vec<AuditRecord>,
}

impl Session {
    pub fn new(id: impl Into<String>, info: DemoInfo) -> Session {
        Session {
            id: id.into(),
            info,
            phase: Phase::Created,
            segments: Vec::new(),
            flags: Vec::new(),
            model: None,
            failure: None,
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn info(&self) -> &DemoInfo {
        &self.info
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Transcription error recorded for segment `i`, if any.
    pub fn flag(&self, i: usize) -> Option<&str> {
        self.flags.get(i).and_then(|f| f.as_deref())
    }

    pub fn model(&self) -> Option<&TaskModel> {
        self.model.as_ref()
    }

    pub fn failure(&self) -> Option<&Failure> {
        self.failure.as_ref().map(|(f, _)| f)
    }

    pub fn log(&self) -> &[AuditRecord] {
        &self.log
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.segments.iter().enumerate().filter(|(_, s)| s.is_active()).map(|(i, _)| i).collect()
    }

    fn expect_phase(&self, op: &'static str, phase: Phase) -> Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(SessionError::WrongPhase { op, phase: self.phase })
        }
    }

    fn check_index(&self, index: usize) -> Result<(), SessionError> {
        if index < self.segments.len() {
            Ok(())
        } else {
            Err(SessionError::OutOfRange { index, len: self.segments.len() })
        }
    }

    fn record(&mut self, timestamp: &str, op: AuditOp) {
        self.log.push(AuditRecord { timestamp: timestamp.to_string(), op });
    }

    /// Cuts the demonstration at the detected stops.
    pub fn segment(&mut self, timestamp: &str, stops: &[usize]) -> Result<(), SessionError> {
        self.expect_phase("segment", Phase::Created)?;
        self.segments = slice_segments(stops, self.info.frame_count);
        self.flags = alloc::vec![None; self.segments.len()];
        self.phase = Phase::Segmented;
        self.record(timestamp, AuditOp::Segment { stops: stops.to_vec() });
        Ok(())
    }

    /// Joins segment `first` with the segment that directly follows it.
    pub fn merge_segments(&mut self, timestamp: &str, first: usize, second: usize) -> Result<(), SessionError> {
        self.expect_phase("merge", Phase::Segmented)?;
        self.check_index(first)?;
        self.check_index(second)?;
        let (a, b) = (&self.segments[first], &self.segments[second]);
        if second != first + 1 || a.end != b.start {
            return Err(SessionError::NotAdjacent { first, second });
        }
        if !a.is_active() {
            return Err(SessionError::SegmentIgnored { index: first });
        }
        if !b.is_active() {
            return Err(SessionError::SegmentIgnored { index: second });
        }
        let end = b.end;
        self.segments[first].end = end;
        self.segments.remove(second);
        self.flags.remove(second);
        self.record(timestamp, AuditOp::Merge { first, second });
        Ok(())
    }

    pub fn ignore_segment(&mut self, timestamp: &str, index: usize) -> Result<(), SessionError> {
        self.expect_phase("ignore", Phase::Segmented)?;
        self.check_index(index)?;
        self.segments[index].status = SegmentStatus::Ignored;
        self.record(timestamp, AuditOp::Ignore { index });
        Ok(())
    }

    /// Accepts the segmentation and transcribes every active segment.
    /// A backend error leaves that segment's transcript empty and flagged.
    pub fn confirm_segments(&mut self, timestamp: &str, backend: &dyn TranscriptionBackend) -> Result<(), SessionError> {
        self.expect_phase("confirm_segments", Phase::Segmented)?;
        let active = self.active_indices();
        if active.len() < 3 {
            return Err(SessionError::TooFewSegments { active: active.len() });
        }
        self.apply_unchecked(timestamp, AuditOp::ConfirmSegments)?;
        for i in active {
            let request = self.transcription_request(i);
            let op = match backend.transcribe(&request) {
                Ok(text) => AuditOp::Transcribed { index: i, text },
                Err(message) => AuditOp::TranscriptionFailed { index: i, message },
            };
            self.apply_unchecked(timestamp, op)?;
        }
        Ok(())
    }

    fn transcription_request(&self, index: usize) -> TranscriptionRequest {
        let seg = &self.segments[index];
        let (samples, audio_rate) = match self.info.audio {
            Some((count, rate)) => {
                let s = frame_to_sample(seg.start, rate, self.info.video_rate).min(count);
                let e = frame_to_sample(seg.end, rate, self.info.video_rate).min(count);
                (Some(s..e), Some(rate))
            }
            None => (None, None),
        };
        TranscriptionRequest { segment: index, frames: seg.frames(), video_rate: self.info.video_rate, samples, audio_rate }
    }

    pub fn set_transcript(&mut self, timestamp: &str, index: usize, text: &str) -> Result<(), SessionError> {
        self.apply_unchecked(timestamp, AuditOp::SetTranscript { index, text: text.to_string() })
    }

    pub fn confirm_transcripts(&mut self, timestamp: &str) -> Result<(), SessionError> {
        self.apply_unchecked(timestamp, AuditOp::ConfirmTranscripts)
    }

    /// Goes back from `TranscriptsConfirmed` to `Transcribed` for more edits.
    pub fn reopen_transcripts(&mut self, timestamp: &str) -> Result<(), SessionError> {
        self.apply_unchecked(timestamp, AuditOp::ReopenTranscripts)
    }

    /// Leaves `Failed` for the phase the failure happened in.
    pub fn revert(&mut self, timestamp: &str) -> Result<(), SessionError> {
        self.apply_unchecked(timestamp, AuditOp::Revert)
    }

    pub fn discard(&mut self, timestamp: &str) -> Result<(), SessionError> {
        self.apply_unchecked(timestamp, AuditOp::Discard)
    }

    /// Recognizes, extracts parameters and assembles the task model. The
    /// model's creation time is `timestamp`. On failure the session moves
    /// to `Failed` and the failure is also returned.
    pub fn compile(&mut self, timestamp: &str, ctx: &CompileContext<'_>) -> Result<&TaskModel, SessionError> {
        self.apply(&AuditRecord { timestamp: timestamp.to_string(), op: AuditOp::Compile }, Some(ctx))?;
        Ok(self.model.as_ref().expect("compiled"))
    }

    fn apply_unchecked(&mut self, timestamp: &str, op: AuditOp) -> Result<(), SessionError> {
        self.apply(&AuditRecord { timestamp: timestamp.to_string(), op }, None)
    }

    /// Applies one record. `ctx` is only consulted for `compile`.
    pub fn apply(&mut self, record: &AuditRecord, ctx: Option<&CompileContext<'_>>) -> Result<(), SessionError> {
        let ts = record.timestamp.as_str();
        match &record.op {
            AuditOp::Segment { stops } => self.segment(ts, stops),
            AuditOp::Merge { first, second } => self.merge_segments(ts, *first, *second),
            AuditOp::Ignore { index } => self.ignore_segment(ts, *index),
            AuditOp::ConfirmSegments => {
                self.expect_phase("confirm_segments", Phase::Segmented)?;
                let active = self.active_indices().len();
                if active < 3 {
                    return Err(SessionError::TooFewSegments { active });
                }
                self.phase = Phase::SegmentsConfirmed;
                self.record(ts, record.op.clone());
                Ok(())
            }
            AuditOp::Transcribed { index, text } => {
                self.accept_transcription(*index)?;
                self.segments[*index].transcript = Some(text.clone());
                self.flags[*index] = None;
                self.finish_transcription(ts, record.op.clone());
                Ok(())
            }
            AuditOp::TranscriptionFailed { index, message } => {
                self.accept_transcription(*index)?;
                self.segments[*index].transcript = Some(String::new());
                self.flags[*index] = Some(message.clone());
                self.finish_transcription(ts, record.op.clone());
                Ok(())
            }
            AuditOp::SetTranscript { index, text } => {
                self.expect_phase("set_transcript", Phase::Transcribed)?;
                self.check_index(*index)?;
                if !self.segments[*index].is_active() {
                    return Err(SessionError::SegmentIgnored { index: *index });
                }
                self.segments[*index].transcript = Some(text.clone());
                self.flags[*index] = None;
                self.record(ts, record.op.clone());
                Ok(())
            }
            AuditOp::ConfirmTranscripts => {
                self.expect_phase("confirm_transcripts", Phase::Transcribed)?;
                if let Some(index) = self.active_indices().into_iter().find(|&i| self.segments[i].transcript.is_none()) {
                    return Err(SessionError::NotTranscribed { index });
                }
                self.phase = Phase::TranscriptsConfirmed;
                self.record(ts, record.op.clone());
                Ok(())
            }
            AuditOp::ReopenTranscripts => {
                self.expect_phase("reopen_transcripts", Phase::TranscriptsConfirmed)?;
                self.phase = Phase::Transcribed;
                self.record(ts, record.op.clone());
                Ok(())
            }
            AuditOp::Compile => {
                self.expect_phase("compile", Phase::TranscriptsConfirmed)?;
                let ctx = ctx.ok_or(SessionError::MissingCompileInputs)?;
                self.record(ts, record.op.clone());
                match build_model(&self.segments, self.info.video_rate, ts, ctx) {
                    Ok(model) => {
                        self.model = Some(model);
                        self.phase = Phase::Compiled;
                        Ok(())
                    }
                    Err(failure) => {
                        self.failure = Some((failure.clone(), self.phase));
                        self.phase = Phase::Failed;
                        Err(SessionError::Compile(failure))
                    }
                }
            }
            AuditOp::Revert => {
                self.expect_phase("revert", Phase::Failed)?;
                let back = match &self.failure {
                    Some((Failure::Discarded, _)) | None => return Err(SessionError::WrongPhase { op: "revert", phase: self.phase }),
                    Some((_, phase)) => *phase,
                };
                self.failure = None;
                self.phase = back;
                self.record(ts, record.op.clone());
                Ok(())
            }
            AuditOp::Discard => {
                self.failure = Some((Failure::Discarded, self.phase));
                self.phase = Phase::Failed;
                self.model = None;
                self.record(ts, record.op.clone());
                Ok(())
            }
        }
    }

    fn accept_transcription(&self, index: usize) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::SegmentsConfirmed | Phase::Transcribed) {
            return Err(SessionError::WrongPhase { op: "transcription result", phase: self.phase });
        }
        self.check_index(index)?;
        if !self.segments[index].is_active() {
            return Err(SessionError::SegmentIgnored { index });
        }
        Ok(())
    }

    fn finish_transcription(&mut self, ts: &str, op: AuditOp) {
        self.phase = Phase::Transcribed;
        self.record(ts, op);
    }

    /// Rebuilds a session from its audit log. A `compile` record fails the
    /// replay unless `ctx` is given; a compile failure is replayed as a
    /// transition to `Failed`, not as an error.
    pub fn replay(
        id: impl Into<String>,
        info: DemoInfo,
        records: &[AuditRecord],
        ctx: Option<&CompileContext<'_>>,
    ) -> Result<Session, SessionError> {
        let mut session = Session::new(id, info);
        for (i, r) in records.iter().enumerate() {
            match session.apply(r, ctx) {
                Ok(()) | Err(SessionError::Compile(_)) => {}
                Err(e) => return Err(SessionError::Log { line: i + 1, message: e.to_string() }),
            }
        }
        Ok(session)
    }
}

/// The daemons that run for a label: poses always, laterality, grasp type
/// and object position for Grasp, a trajectory for manipulative tasks, and a
/// hinge fit on top of that for the hinge tasks.
pub fn daemons_for(label: TaskLabel) -> &'static [&'static str] {
    match label {
        TaskLabel::Grasp => &["object_name", "laterality", "object_position", "grasp_type", "arm_pose"],
        TaskLabel::Release => &["object_name", "arm_pose"],
        l if l.is_hinge() => &["object_name", "trajectory", "hinge", "arm_pose"],
        _ => &["object_name", "trajectory", "arm_pose"],
    }
}

fn build_model(segments: &[Segment], video_rate: f64, timestamp: &str, ctx: &CompileContext<'_>) -> Result<TaskModel, Failure> {
    let active: Vec<(usize, &Segment)> = segments.iter().enumerate().filter(|(_, s)| s.is_active()).collect();

    let mut labels = Vec::with_capacity(active.len());
    for &(i, seg) in &active {
        let text = seg.transcript.as_deref().unwrap_or_default();
        let prediction = ctx.recognizer.predict(text).map_err(|error| Failure::Recognition { segment: i, error })?;
        labels.push(prediction.label);
    }
    validate_gmr(&labels).map_err(Failure::Grammar)?;

    let mut hand: Option<Hand> = None;
    let mut steps = Vec::with_capacity(active.len());
    for (&(i, seg), &label) in active.iter().zip(&labels) {
        let daemon = |daemon: &'static str| move |error: SkillError| Failure::Daemon { segment: i, daemon, error };
        let transcript = seg.transcript.clone().unwrap_or_default();
        let track = ctx.detections.within(seg.frames());
        let mut params = SkillParameters { object_name: ctx.objects.extract(&transcript), ..Default::default() };

        match label {
            TaskLabel::Grasp => {
                let h = laterality_from_track(&track).map_err(daemon("laterality"))?;
                hand = Some(h);
                params.hand_laterality = Some(h);
                params.object_position = Some(object_position_from_track(&track, &ctx.intrinsics).map_err(daemon("object_position"))?);
                let scores = ctx
                    .grasp_scores
                    .range(seg.frames())
                    .next_back()
                    .map(|(_, d)| d)
                    .ok_or(SkillError::DetectionUnavailable("grasp scores"))
                    .map_err(daemon("grasp_type"))?;
                let prior = params.object_name.as_ref().and_then(|n| ctx.grasp_priors.get(n));
                params.grasp_type = Some(fuse_grasp_type(scores, prior).map_err(daemon("grasp_type"))?.label);
            }
            TaskLabel::Release => {}
            _ => {
                let h = hand.expect("grammar puts Grasp first");
                                let traj = extract_trajectory(&track, &ctx.intrinsics, h, ctx.min_confidence, |f| f as f64 / video_rate)
                    .map_err(daemon("trajectory"))?;
                if label.is_hinge() {
                    let points: Vec<_> = traj.iter().map(|p| p.position).collect();
                    params.hinge = Some(fit_hinge(&points, &ctx.hinge).map_err(daemon("hinge"))?.params);
                }
                params.hand_trajectory = Some(traj);
            }
        }
        let (start, end) = start_end_poses(&track).map_err(daemon("arm_pose"))?;
        params.start_pose = Some(start);
        params.end_pose = Some(end);

        steps.push(TaskStep { label, params: params.quantized(), source_segment: i, transcript });
    }

    Ok(TaskModel {
        steps,
        metadata: Metadata {
            bundle_id: ctx.bundle_id.to_string(),
            created: timestamp.to_string(),
            tool_version: ctx.tool_version.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recognition::{Prediction, VocabularyMatcher};
    use crate::skillparams::{Detection, DetectionKind};
    use alloc::vec;

    struct Keyword;

    impl Recognizer for Keyword {
        fn predict(&self, text: &str) -> Result<Prediction, RecognitionError> {
            let label = match text.split_whitespace().next() {
                None => return Err(RecognitionError::NoContent),
                Some("grasp") => TaskLabel::Grasp,
                Some("pick") => TaskLabel::Ptg11,
                Some("bring") => TaskLabel::Ptg12,
                Some("place") => TaskLabel::Ptg13,
                Some("open") => TaskLabel::Ptg51,
                _ => TaskLabel::Release,
            };
            Ok(Prediction { label, scores: vec![(label, 1.0)] })
        }
    }

    struct Script(Vec<&'static str>);

    impl TranscriptionBackend for Script {
        fn transcribe(&self, r: &TranscriptionRequest) -> Result<String, String> {
            let n = self.0.len();
            let i = r.frames.start * n / 100;
            match self.0[i] {
                "!" => Err("service unavailable".into()),
                s => Ok(s.into()),
            }
        }
    }

    fn info() -> DemoInfo {
        DemoInfo { frame_count: 100, video_rate: 10.0, audio: Some((48_000, 4800.0)) }
    }

    fn segmented(stops: &[usize]) -> Session {
        let mut s = Session::new("s1", info());
        s.segment("t0", stops).unwrap();
        s
    }

    fn detections() -> DetectionTrack {
        let mut d = Vec::new();
        for f in 0..100 {
            let det = |kind, x: f64, y: f64, z: f64| Detection { frame: f, kind, x, y, z, confidence: 0.9 };
            d.push(det(DetectionKind::Object, 300.0, 200.0, 800.0));
            d.push(det(DetectionKind::LeftHand, 100.0, 100.0, 800.0));
            let t = f as f64 / 100.0;
            d.push(det(DetectionKind::RightHand, 320.0 + 100.0 * libm::cos(t), 200.0 + 100.0 * libm::sin(t), 800.0));
            d.push(det(DetectionKind::LeftShoulder, -0.2, 0.0, 1.0));
            d.push(det(DetectionKind::LeftElbow, -0.2, 0.3, 1.0));
            d.push(det(DetectionKind::LeftWrist, -0.2, 0.6, 1.0));
            d.push(det(DetectionKind::RightShoulder, 0.2, 0.0, 1.0));
            d.push(det(DetectionKind::RightElbow, 0.5, 0.0, 1.0));
            d.push(det(DetectionKind::RightWrist, 0.5, 0.0, 0.7));
        }
        DetectionTrack::new(d)
    }

    fn with_ctx<R>(f: impl FnOnce(&CompileContext<'_>) -> R) -> R {
        let track = detections();
        let mut scores = BTreeMap::new();
        for f in [5, 20] {
            scores.insert(f, [("power".to_string(), 0.7), ("precision".to_string(), 0.3)].into_iter().collect());
        }
        let priors = BTreeMap::new();
        let objects = VocabularyMatcher { vocabulary: vec!["box".into(), "door".into()] };
        let ctx = CompileContext {
            recognizer: &Keyword,
            objects: &objects,
            detections: &track,
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap(),
            grasp_scores: &scores,
            grasp_priors: &priors,
            min_confidence: 0.5,
            hinge: HingeFitConfig::default(),
            bundle_id: "demo",
            tool_version: "test",
        };
        f(&ctx)
    }

    #[test]
    fn merge_and_ignore() {
        let mut s = segmented(&[10, 20, 30]);
        assert_eq!(s.segments().len(), 4);
        s.merge_segments("t1", 0, 1).unwrap();
        assert_eq!(s.segments()[0].frames(), 0..20);
        assert_eq!(s.segments().len(), 3);
        assert_eq!(s.merge_segments("t2", 0, 2), Err(SessionError::NotAdjacent { first: 0, second: 2 }));
        s.ignore_segment("t3", 0).unwrap();
        s.ignore_segment("t4", 0).unwrap();
        assert_eq!(s.segments()[0].status, SegmentStatus::Ignored);
        assert_eq!(s.merge_segments("t5", 0, 1), Err(SessionError::SegmentIgnored { index: 0 }));
        assert_eq!(s.ignore_segment("t6", 9), Err(SessionError::OutOfRange { index: 9, len: 3 }));
        assert_eq!(s.log().len(), 4);
    }

    #[test]
    fn confirm_needs_three_active() {
        let mut s = segmented(&[50]);
        let backend = Script(vec!["grasp"]);
        assert_eq!(s.confirm_segments("t", &backend), Err(SessionError::TooFewSegments { active: 2 }));
        assert_eq!(s.phase(), Phase::Segmented);
    }

    #[test]
    fn transcription_failure_is_flagged() {
        let mut s = segmented(&[25, 50, 75]);
        s.confirm_segments("t1", &Script(vec!["grasp the box", "pick it", "!", "release"])).unwrap();
        assert_eq!(s.phase(), Phase::Transcribed);
        assert_eq!(s.segments()[2].transcript.as_deref(), Some(""));
        assert_eq!(s.flag(2), Some("service unavailable"));
        assert_eq!(s.flag(1), None);
        s.set_transcript("t2", 2, "bring it").unwrap();
        assert_eq!(s.flag(2), None);
    }

    #[test]
    fn transcription_requests_carry_audio_range() {
        let s = segmented(&[25, 50, 75]);
        let r = s.transcription_request(1);
        assert_eq!(r.samples, Some(12_000..24_000));
        assert_eq!(r.seconds(), 2.5..5.0);
    }

    #[test]
    fn edits_are_phase_gated() {
        let mut s = segmented(&[25, 50, 75]);
        assert!(matches!(s.set_transcript("t", 0, "x"), Err(SessionError::WrongPhase { .. })));
        s.confirm_segments("t", &Script(vec!["grasp", "pick", "place", "release"])).unwrap();
        assert!(matches!(s.merge_segments("t", 0, 1), Err(SessionError::WrongPhase { .. })));
        assert!(matches!(s.ignore_segment("t", 0), Err(SessionError::WrongPhase { .. })));
        with_ctx(|ctx| assert!(matches!(s.compile("t", ctx), Err(SessionError::WrongPhase { .. }))));
    }

    #[test]
    fn set_transcript_rejects_ignored_segment() {
        let mut s = segmented(&[20, 40, 60, 80]);
        s.ignore_segment("t", 0).unwrap();
        s.confirm_segments("t", &Script(vec!["x", "grasp", "pick", "place", "release"])).unwrap();
        assert_eq!(s.segments()[0].transcript, None);
        assert_eq!(s.set_transcript("t", 0, "grasp"), Err(SessionError::SegmentIgnored { index: 0 }));
    }

    fn transcribed(lines: Vec<&'static str>) -> Session {
        let mut s = segmented(&[25, 50, 75]);
        s.confirm_segments("t1", &Script(lines)).unwrap();
        s
    }

    #[test]
    fn compile_pick_place() {
        let mut s = transcribed(vec!["grasp the box", "pick it up", "place it", "release"]);
        s.confirm_transcripts("t2").unwrap();
        let model = with_ctx(|ctx| s.compile("2024-01-01T00:00:00Z", ctx).cloned()).unwrap();
        assert_eq!(model.labels(), [TaskLabel::Grasp, TaskLabel::Ptg11, TaskLabel::Ptg13, TaskLabel::Release]);
        assert_eq!(model.metadata.created, "2024-01-01T00:00:00Z");
        let grasp = &model.steps[0].params;
        assert_eq!(grasp.hand_laterality, Some(Hand::Right));
        assert_eq!(grasp.grasp_type.as_deref(), Some("power"));
        assert_eq!(grasp.object_name.as_deref(), Some("box"));
        assert!(grasp.object_position.is_some());
        assert_eq!(model.steps[1].params.hand_trajectory.as_ref().map(Vec::len), Some(25));
        assert!(model.steps[3].params.hand_trajectory.is_none());
        assert!(model.steps.iter().all(|st| st.params.start_pose.is_some() && st.params.end_pose.is_some()));
        assert_eq!(s.phase(), Phase::Compiled);
        assert_eq!(TaskModel::parse(&model.to_text()).unwrap(), model);
    }

    #[test]
    fn compile_hinge_step() {
        let mut s = transcribed(vec!["grasp the door", "open it", "open more", "release"]);
        s.confirm_transcripts("t2").unwrap();
        let model = with_ctx(|ctx| s.compile("t3", ctx).cloned()).unwrap();
        assert!(model.steps[1].params.hinge.is_some());
    }

    #[test]
    fn grammar_failure_then_revert_and_fix() {
        let mut s = transcribed(vec!["grasp", "pick", "place", "place"]);
        s.confirm_transcripts("t2").unwrap();
        let err = with_ctx(|ctx| s.compile("t3", ctx).err()).unwrap();
        assert!(matches!(err, SessionError::Compile(Failure::Grammar(_))));
        assert!(err.to_string().contains("must end with Release"));
        assert_eq!(s.phase(), Phase::Failed);
        s.revert("t4").unwrap();
        assert_eq!(s.phase(), Phase::TranscriptsConfirmed);
        s.reopen_transcripts("t5").unwrap();
        s.set_transcript("t6", 3, "release").unwrap();
        s.confirm_transcripts("t7").unwrap();
        with_ctx(|ctx| s.compile("t8", ctx).map(|_| ())).unwrap();
    }

    #[test]
    fn empty_transcript_fails_with_no_content() {
        let mut s = transcribed(vec!["grasp", "pick", "place", "release"]);
        s.set_transcript("t", 2, "").unwrap();
        s.confirm_transcripts("t").unwrap();
        let err = with_ctx(|ctx| s.compile("t", ctx).err()).unwrap();
        assert_eq!(err, SessionError::Compile(Failure::Recognition { segment: 2, error: RecognitionError::NoContent }));
        assert!(err.to_string().contains("no content"));
    }

    #[test]
    fn daemon_failure_names_segment_and_daemon() {
        let mut s = transcribed(vec!["grasp", "pick", "place", "release"]);
        s.confirm_transcripts("t").unwrap();
        let track = DetectionTrack::new(detections().detections().iter().filter(|d| d.kind != DetectionKind::Object).copied().collect());
        let err = with_ctx(|ctx| {
            let ctx = CompileContext { detections: &track, ..*ctx };
            s.compile("t", &ctx).err()
        })
        .unwrap();
        assert!(matches!(err, SessionError::Compile(Failure::Daemon { segment: 0, daemon: "laterality", .. })));
    }

    #[test]
    fn replay_reproduces_state() {
        let mut s = segmented(&[10, 25, 50, 75, 90]);
        s.ignore_segment("t1", 0).unwrap();
        s.merge_segments("t2", 4, 5).unwrap();
        s.ignore_segment("t3", 4).unwrap();
        s.confirm_segments("t4", &Script(vec!["x", "grasp the box", "pick", "x", "x", "!", "x", "x", "x", "x"])).unwrap();
        assert_eq!(s.flag(3), Some("service unavailable"));
        s.set_transcript("t5", 3, "place it").unwrap();
        s.confirm_transcripts("t6").unwrap();
        with_ctx(|ctx| {
            assert!(s.compile("t7", ctx).is_err());
            s.revert("t8").unwrap();
            s.reopen_transcripts("t9").unwrap();
            s.set_transcript("t10", 3, "release it").unwrap();
            s.confirm_transcripts("t11").unwrap();
            s.compile("t12", ctx).unwrap();

            let text = audit_text(s.log());
            let records = parse_audit(&text).unwrap();
            assert_eq!(records, s.log());
            let again = Session::replay("s1", info(), &records, Some(ctx)).unwrap();
            assert_eq!(again, s);
            assert_eq!(again.model().unwrap().to_text(), s.model().unwrap().to_text());
        });
    }

    #[test]
    fn replay_without_inputs_stops_at_compile() {
        let mut s = transcribed(vec!["grasp", "pick", "place", "release"]);
        s.confirm_transcripts("t").unwrap();
        with_ctx(|ctx| s.compile("t", ctx).map(|_| ())).unwrap();
        let err = Session::replay("s1", info(), s.log(), None).unwrap_err();
        assert!(matches!(err, SessionError::Log { line: 8, .. }));
    }

    #[test]
    fn discard_from_any_phase() {
        let mut s = Session::new("x", info());
        s.discard("t").unwrap();
        assert_eq!(s.phase(), Phase::Failed);
        assert_eq!(s.failure(), Some(&Failure::Discarded));
        assert!(s.revert("t").is_err());
    }

    #[test]
    fn audit_lines() {
        let r = AuditRecord {
            timestamp: "2024-05-01T10:00:00Z".into(),
            op: AuditOp::SetTranscript { index: 3, text: "grasp\tthe\ncup".into() },
        };
        let line = r.to_line();
        assert_eq!(line, "2024-05-01T10:00:00Z\tset_transcript\t3\tgrasp\\tthe\\ncup");
        assert_eq!(AuditRecord::parse_line(&line).unwrap(), r);
        let seg = AuditRecord { timestamp: "t".into(), op: AuditOp::Segment { stops: vec![] } };
        assert_eq!(AuditRecord::parse_line(&seg.to_line()).unwrap(), seg);
        assert!(AuditRecord::parse_line("t\tfly").is_err());
        assert!(AuditRecord::parse_line("t\tmerge\t1").is_err());
        assert!(AuditRecord::parse_line("t\tcompile\textra").is_err());
        assert!(matches!(parse_audit("t\tcompile\nbad"), Err(SessionError::Log { line: 2, .. })));
    }
}
