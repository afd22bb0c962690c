//! Task-model intermediate representation.
//!
//! A task model is one grasp-manipulation-release (GMR) operation: a `Grasp`
//! step, one or more manipulative steps, and a `Release` step, each carrying
//! the skill parameters extracted from its video segment.
//!
//! The text format is line oriented:
//!
//! ```text
//! taskmodel v1
//! meta bundle = "pick_bring_place"
//! meta created = "2026-01-01T00:00:00Z"
//! meta tool = "ites 0.1.0"
//! step 0: label=Grasp
//!   segment = 1
//!   transcript = "Grab the box."
//!   param object_name = "box"
//!   param object_position = 0.100000,-0.020000,0.850000
//!   param hand_laterality = right
//!   param start_pose = 2,2,11,11
//! step 1: label=PTG11
//!   ...
//! ```
//!
//! Positions use six fractional digits (micrometers). Other reals use the
//! shortest representation that parses back to the same `f64`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use crate::geom::Vec3;
use crate::text::{quote, unquote};

/// Primitive task vocabulary.
///
/// Declaration order is the fixed class order used for tie-breaking and
/// for confusion-matrix layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskLabel {
    Grasp,
    Ptg11,
    Ptg12,
    Ptg13,
    Ptg31,
    Ptg33,
    Ptg51,
    Ptg53,
    Stg2,
    Stg3,
    Stg5,
    Stg6,
    Mtg1,
    Release,
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 14] = [
        TaskLabel::Grasp,
        TaskLabel::Ptg11,
        TaskLabel::Ptg12,
        TaskLabel::Ptg13,
        TaskLabel::Ptg31,
        TaskLabel::Ptg33,
        TaskLabel::Ptg51,
        TaskLabel::Ptg53,
        TaskLabel::Stg2,
        TaskLabel::Stg3,
        TaskLabel::Stg5,
        TaskLabel::Stg6,
        TaskLabel::Mtg1,
        TaskLabel::Release,
    ];

    /// Symbolic code as written in task-model and corpus files.
    pub fn code(self) -> &'static str {
        match self {
            TaskLabel::Grasp => "Grasp",
            TaskLabel::Ptg11 => "PTG11",
            TaskLabel::Ptg12 => "PTG12",
            TaskLabel::Ptg13 => "PTG13",
            TaskLabel::Ptg31 => "PTG31",
            TaskLabel::Ptg33 => "PTG33",
            TaskLabel::Ptg51 => "PTG51",
            TaskLabel::Ptg53 => "PTG53",
            TaskLabel::Stg2 => "STG2",
            TaskLabel::Stg3 => "STG3",
            TaskLabel::Stg5 => "STG5",
            TaskLabel::Stg6 => "STG6",
            TaskLabel::Mtg1 => "MTG1",
            TaskLabel::Release => "Release",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskLabel::Grasp => "Grasping",
            TaskLabel::Ptg11 => "Picking",
            TaskLabel::Ptg12 => "Bringing",
            TaskLabel::Ptg13 => "Placing",
            TaskLabel::Ptg31 => "Sliding_to_open",
            TaskLabel::Ptg33 => "Sliding_to_close",
            TaskLabel::Ptg51 => "Rotating_hinge_to_open",
            TaskLabel::Ptg53 => "Rotating_hinge_to_close",
            TaskLabel::Stg2 => "Wiping",
            TaskLabel::Stg3 => "Peeling",
            TaskLabel::Stg5 => "Pouring",
            TaskLabel::Stg6 => "Holding",
            TaskLabel::Mtg1 => "Cutting",
            TaskLabel::Release => "Releasing",
        }
    }

    /// Parses a symbolic code. `PTG5` is accepted as the door-opening task.
    pub fn from_code(code: &str) -> Option<TaskLabel> {
        if code == "PTG5" {
            return Some(TaskLabel::Ptg51);
        }
        TaskLabel::ALL.iter().copied().find(|l| l.code() == code)
    }

    /// `Grasp` and `Release` delimit a GMR operation; everything else manipulates.
    pub fn is_boundary(self) -> bool {
        matches!(self, TaskLabel::Grasp | TaskLabel::Release)
    }

    pub fn is_manipulative(self) -> bool {
        !self.is_boundary()
    }

    pub fn is_hinge(self) -> bool {
        matches!(self, TaskLabel::Ptg51 | TaskLabel::Ptg53)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn as_str(self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }

    pub fn parse(s: &str) -> Option<Hand> {
        match s {
            "left" => Some(Hand::Left),
            "right" => Some(Hand::Right),
            _ => None,
        }
    }
}

/// Number of entries in the arm-direction codebook.
pub const DIRECTION_COUNT: u8 = 26;

/// Quantized directions of the four arm segments, in the order left upper,
/// left lower, right upper, right lower. Each entry indexes the 26-direction
/// codebook in [`crate::skillparams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArmPoseCode([u8; 4]);

impl ArmPoseCode {
    pub fn new(codes: [u8; 4]) -> Option<ArmPoseCode> {
        codes.iter().all(|&c| c < DIRECTION_COUNT).then_some(ArmPoseCode(codes))
    }

    pub fn codes(self) -> [u8; 4] {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HingeSense {
    Opening,
    Closing,
}

impl HingeSense {
    pub fn as_str(self) -> &'static str {
        match self {
            HingeSense::Opening => "opening",
            HingeSense::Closing => "closing",
        }
    }

    pub fn parse(s: &str) -> Option<HingeSense> {
        match s {
            "opening" => Some(HingeSense::Opening),
            "closing" => Some(HingeSense::Closing),
            _ => None,
        }
    }
}

/// Rotation of the hand about a hinge axis.
///
/// `axis` is oriented so that the sweep from `start_angle` to `end_angle` is
/// positive (right-hand rule); `sense` records how that axis relates to the
/// configured reference direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeParams {
    pub center: Vec3,
    pub axis: Vec3,
    pub radius: f64,
    pub start_angle: f64,
    pub end_angle: f64,
    pub sense: HingeSense,
}

impl HingeParams {
    pub fn sweep(&self) -> f64 {
        self.end_angle - self.start_angle
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    /// Seconds from the start of the demonstration.
    pub time: f64,
    pub position: Vec3,
}

/// Per-task parameters. Which fields are present depends on the task label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillParameters {
    pub object_name: Option<String>,
    pub object_position: Option<Vec3>,
    pub hand_laterality: Option<Hand>,
    pub grasp_type: Option<String>,
    pub hand_trajectory: Option<Vec<TrajectoryPoint>>,
    pub hinge: Option<HingeParams>,
    pub start_pose: Option<ArmPoseCode>,
    pub end_pose: Option<ArmPoseCode>,
}

impl SkillParameters {
    /// Rounds every position to the file resolution so that the parameters
    /// survive a serialize/parse round trip unchanged.
    pub fn quantized(mut self) -> SkillParameters {
        self.object_position = self.object_position.map(quantize_point);
        if let Some(traj) = self.hand_trajectory.as_mut() {
            for p in traj.iter_mut() {
                p.position = quantize_point(p.position);
            }
        }
        if let Some(h) = self.hinge.as_mut() {
            h.center = quantize_point(h.center);
        }
        self
    }
}

/// Rounds each coordinate to a whole number of micrometers.
pub fn quantize_point(p: Vec3) -> Vec3 {
    let q = |v: f64| libm::round(v * 1e6) / 1e6;
    Vec3::new(q(p.x), q(p.y), q(p.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStep {
    pub label: TaskLabel,
    pub params: SkillParameters,
    /// Index of the active segment this step was recognized from.
    pub source_segment: usize,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Metadata {
    pub bundle_id: String,
    pub created: String,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub steps: Vec<TaskStep>,
    pub metadata: Metadata,
}

// ---------------------------------------------------------------------------
// GMR grammar

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmrRule {
    Empty,
    MustStartWithGrasp,
    MustEndWithRelease,
    BoundaryInInterior,
    NoManipulativeTask,
}

impl GmrRule {
    pub fn message(self) -> &'static str {
        match self {
            GmrRule::Empty => "empty task sequence",
            GmrRule::MustStartWithGrasp => "must start with Grasp",
            GmrRule::MustEndWithRelease => "must end with Release",
            GmrRule::BoundaryInInterior => "Grasp/Release not allowed at interior position",
            GmrRule::NoManipulativeTask => "no manipulative interior task",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub rule: GmrRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "position {}: {}", self.position, self.rule.message())
    }
}

/// Checks a label sequence against the GMR grammar
/// `Grasp (manipulative)+ Release`.
pub fn validate_gmr(labels: &[TaskLabel]) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let Some((&first, _)) = labels.split_first() else {
        violations.push(Violation { position: 0, rule: GmrRule::Empty });
        return Err(violations);
    };
    let last_pos = labels.len() - 1;
    if first != TaskLabel::Grasp {
        violations.push(Violation { position: 0, rule: GmrRule::MustStartWithGrasp });
    }
    if labels[last_pos] != TaskLabel::Release {
        violations.push(Violation { position: last_pos, rule: GmrRule::MustEndWithRelease });
    }
    let interior = if labels.len() > 2 { &labels[1..last_pos] } else { &[][..] };
    for (offset, label) in interior.iter().enumerate() {
        if label.is_boundary() {
            violations.push(Violation { position: offset + 1, rule: GmrRule::BoundaryInInterior });
        }
    }
    if !interior.iter().any(|l| l.is_manipulative()) {
        violations.push(Violation { position: labels.len().min(1), rule: GmrRule::NoManipulativeTask });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

impl TaskModel {
    pub fn labels(&self) -> Vec<TaskLabel> {
        self.steps.iter().map(|s| s.label).collect()
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate_gmr(&self.labels())
    }

    /// Writes the model in the `taskmodel v1` text format.
    ///
    /// Positions are written at micrometer resolution; call
    /// [`SkillParameters::quantized`] first if exact round trips matter.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("taskmodel v1\n");
        let _ = writeln!(out, "meta bundle = {}", quote(&self.metadata.bundle_id));
        let _ = writeln!(out, "meta created = {}", quote(&self.metadata.created));
        let _ = writeln!(out, "meta tool = {}", quote(&self.metadata.tool_version));
        for (i, step) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "step {i}: label={}", step.label.code());
            let _ = writeln!(out, "  segment = {}", step.source_segment);
            let _ = writeln!(out, "  transcript = {}", quote(&step.transcript));
            write_params(&mut out, &step.params);
        }
        out
    }

    /// Parses the `taskmodel v1` text format, including GMR validation.
    pub fn parse(text: &str) -> Result<TaskModel, ParseError> {
        Parser::new(text).parse()
    }
}

fn fmt_point(p: Vec3) -> String {
    format!("{:.6},{:.6},{:.6}", p.x, p.y, p.z)
}

fn fmt_vector(v: Vec3) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn write_params(out: &mut String, p: &SkillParameters) {
    if let Some(name) = &p.object_name {
        let _ = writeln!(out, "  param object_name = {}", quote(name));
    }
    if let Some(pos) = p.object_position {
        let _ = writeln!(out, "  param object_position = {}", fmt_point(pos));
    }
    if let Some(hand) = p.hand_laterality {
        let _ = writeln!(out, "  param hand_laterality = {}", hand.as_str());
    }
    if let Some(grasp) = &p.grasp_type {
        let _ = writeln!(out, "  param grasp_type = {}", quote(grasp));
    }
    if let Some(traj) = &p.hand_trajectory {
        let _ = writeln!(out, "  param hand_trajectory = {}", traj.len());
        for tp in traj {
            let _ = writeln!(out, "    {} {}", tp.time, fmt_point(tp.position));
        }
    }
    if let Some(h) = &p.hinge {
        let _ = writeln!(
            out,
            "  param hinge = center={} axis={} radius={} start={} end={} sense={}",
            fmt_point(h.center),
            fmt_vector(h.axis),
            h.radius,
            h.start_angle,
            h.end_angle,
            h.sense.as_str()
        );
    }
    for (name, pose) in [("start_pose", p.start_pose), ("end_pose", p.end_pose)] {
        if let Some(pose) = pose {
            let [a, b, c, d] = pose.codes();
            let _ = writeln!(out, "  param {name} = {a},{b},{c},{d}");
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based line number; 0 when the error concerns the whole document.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl core::error::Error for ParseError {}

const PARAM_ORDER: [&str; 8] = [
    "object_name",
    "object_position",
    "hand_laterality",
    "grasp_type",
    "hand_trajectory",
    "hinge",
    "start_pose",
    "end_pose",
];

struct Parser<'a> {
    lines: core::iter::Peekable<core::iter::Enumerate<core::str::Lines<'a>>>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { lines: text.lines().enumerate().peekable() }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        self.lines.next().map(|(i, l)| (i + 1, l))
    }

    fn peek_line(&mut self) -> Option<(usize, &'a str)> {
        self.lines.peek().map(|&(i, l)| (i + 1, l))
    }

    fn parse(mut self) -> Result<TaskModel, ParseError> {
        match self.next_line() {
            Some((_, "taskmodel v1")) => {}
            Some((n, other)) => return Err(err(n, format!("expected header `taskmodel v1`, found `{other}`"))),
            None => return Err(err(0, "empty document".to_string())),
        }

        let mut metadata = Metadata::default();
        for (key, slot) in [
            ("bundle", &mut metadata.bundle_id),
            ("created", &mut metadata.created),
            ("tool", &mut metadata.tool_version),
        ] {
            let (n, line) = self.next_line().ok_or_else(|| err(0, format!("missing `meta {key}` line")))?;
            let prefix = format!("meta {key} = ");
            let value = line
                .strip_prefix(prefix.as_str())
                .ok_or_else(|| err(n, format!("expected `meta {key} = ...`")))?;
            *slot = unquote(value).ok_or_else(|| err(n, "malformed quoted string".to_string()))?;
        }

        let mut steps: Vec<TaskStep> = Vec::new();
        while let Some((n, line)) = self.next_line() {
            if line.trim().is_empty() {
                continue;
            }
            let rest = line.strip_prefix("step ").ok_or_else(|| err(n, format!("expected `step`, found `{line}`")))?;
            let (index, label) = rest
                .split_once(": label=")
                .ok_or_else(|| err(n, "expected `step <i>: label=<CODE>`".to_string()))?;
            let index: usize = index.parse().map_err(|_| err(n, format!("invalid step index `{index}`")))?;
            if index != steps.len() {
                return Err(err(n, format!("step index {index} out of sequence, expected {}", steps.len())));
            }
            let label = TaskLabel::from_code(label).ok_or_else(|| err(n, format!("unknown task label `{label}`")))?;
            steps.push(self.parse_step_body(n, label)?);
        }

        let labels: Vec<TaskLabel> = steps.iter().map(|s| s.label).collect();
        if let Err(violations) = validate_gmr(&labels) {
            let joined: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(err(0, format!("invalid GMR sequence: {}", joined.join("; "))));
        }
        Ok(TaskModel { steps, metadata })
    }

    fn parse_step_body(&mut self, header_line: usize, label: TaskLabel) -> Result<TaskStep, ParseError> {
        let (n, line) = self.next_line().ok_or_else(|| err(header_line, "step without body".to_string()))?;
        let seg = line.strip_prefix("  segment = ").ok_or_else(|| err(n, "expected `  segment = <i>`".to_string()))?;
        let source_segment: usize = seg.parse().map_err(|_| err(n, format!("invalid segment index `{seg}`")))?;

        let (n, line) = self.next_line().ok_or_else(|| err(n, "missing transcript".to_string()))?;
        let tr = line
            .strip_prefix("  transcript = ")
            .ok_or_else(|| err(n, "expected `  transcript = \"...\"`".to_string()))?;
        let transcript = unquote(tr).ok_or_else(|| err(n, "malformed quoted string".to_string()))?;

        let mut params = SkillParameters::default();
        let mut last_order: Option<usize> = None;
        while let Some((n, line)) = self.peek_line() {
            let Some(rest) = line.strip_prefix("  param ") else { break };
            self.next_line();
            let (name, value) = rest.split_once(" = ").ok_or_else(|| err(n, "expected `param <name> = <value>`".to_string()))?;
            let order = PARAM_ORDER
                .iter()
                .position(|&p| p == name)
                .ok_or_else(|| err(n, format!("unknown parameter `{name}`")))?;
            if last_order.is_some_and(|last| order <= last) {
                return Err(err(n, format!("parameter `{name}` duplicated or out of order")));
            }
            last_order = Some(order);
            match name {
                "object_name" => params.object_name = Some(unquote(value).ok_or_else(|| err(n, "malformed quoted string".to_string()))?),
                "object_position" => params.object_position = Some(parse_vec3(value).ok_or_else(|| err(n, format!("invalid point `{value}`")))?),
                "hand_laterality" => params.hand_laterality = Some(Hand::parse(value).ok_or_else(|| err(n, format!("invalid hand `{value}`")))?),
                "grasp_type" => params.grasp_type = Some(unquote(value).ok_or_else(|| err(n, "malformed quoted string".to_string()))?),
                "hand_trajectory" => {
                    let count: usize = value.parse().map_err(|_| err(n, format!("invalid point count `{value}`")))?;
                    params.hand_trajectory = Some(self.parse_trajectory(n, count)?);
                }
                "hinge" => params.hinge = Some(parse_hinge(value).map_err(|m| err(n, m))?),
                "start_pose" => params.start_pose = Some(parse_pose(value).ok_or_else(|| err(n, format!("invalid pose `{value}`")))?),
                "end_pose" => params.end_pose = Some(parse_pose(value).ok_or_else(|| err(n, format!("invalid pose `{value}`")))?),
                _ => unreachable!("name checked against PARAM_ORDER"),
            }
        }
        Ok(TaskStep { label, params, source_segment, transcript })
    }

    fn parse_trajectory(&mut self, header_line: usize, count: usize) -> Result<Vec<TrajectoryPoint>, ParseError> {
        let mut points: Vec<TrajectoryPoint> = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = self.next_line().ok_or_else(|| err(header_line, "trajectory truncated".to_string()))?;
            let body = line.strip_prefix("    ").ok_or_else(|| err(n, "expected indented trajectory point".to_string()))?;
            let (t, p) = body.split_once(' ').ok_or_else(|| err(n, "expected `<time> x,y,z`".to_string()))?;
            let time: f64 = t.parse().map_err(|_| err(n, format!("invalid time `{t}`")))?;
            let position = parse_vec3(p).ok_or_else(|| err(n, format!("invalid point `{p}`")))?;
            if !time.is_finite() {
                return Err(err(n, "non-finite time".to_string()));
            }
            if points.last().is_some_and(|prev| prev.time >= time) {
                return Err(err(n, "trajectory timestamps must be strictly increasing".to_string()));
            }
            points.push(TrajectoryPoint { time, position });
        }
        Ok(points)
    }
}

fn err(line: usize, message: String) -> ParseError {
    ParseError { line, message }
}

fn parse_vec3(s: &str) -> Option<Vec3> {
    let mut it = s.split(',');
    let x = it.next()?.parse().ok()?;
    let y = it.next()?.parse().ok()?;
    let z = it.next()?.parse().ok()?;
    let v = Vec3::new(x, y, z);
    (it.next().is_none() && v.is_finite()).then_some(v)
}

fn parse_pose(s: &str) -> Option<ArmPoseCode> {
    let mut codes = [0u8; 4];
    let mut it = s.split(',');
    for c in codes.iter_mut() {
        *c = it.next()?.parse().ok()?;
    }
    if it.next().is_some() {
        return None;
    }
    ArmPoseCode::new(codes)
}

fn parse_hinge(s: &str) -> Result<HingeParams, String> {
    let mut fields = s.split(' ');
    let mut take = |key: &str| -> Result<&str, String> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|f| f.strip_prefix('='))
            .ok_or_else(|| format!("hinge: expected `{key}=`"))
    };
    let center = take("center")?;
    let center = parse_vec3(center).ok_or_else(|| format!("hinge: invalid center `{center}`"))?;
    let axis = take("axis")?;
    let axis = parse_vec3(axis).ok_or_else(|| format!("hinge: invalid axis `{axis}`"))?;
    let real = |v: &str, what: &str| -> Result<f64, String> {
        v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("hinge: invalid {what} `{v}`"))
    };
    let radius = real(take("radius")?, "radius")?;
    let start_angle = real(take("start")?, "start")?;
    let end_angle = real(take("end")?, "end")?;
    let sense = take("sense")?;
    let sense = HingeSense::parse(sense).ok_or_else(|| format!("hinge: invalid sense `{sense}`"))?;
    if fields.next().is_some() {
        return Err("hinge: trailing fields".to_string());
    }
    if libm::fabs(axis.norm() - 1.0) > 1e-9 {
        return Err("hinge: axis is not a unit vector".to_string());
    }
    if radius <= 0.0 {
        return Err("hinge: radius must be positive".to_string());
    }
    if libm::fabs(end_angle - start_angle) > 2.0 * core::f64::consts::PI {
        return Err("hinge: sweep exceeds a full turn".to_string());
    }
    Ok(HingeParams { center, axis, radius, start_angle, end_angle, sense })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use TaskLabel::*;

    fn step(label: TaskLabel, segment: usize) -> TaskStep {
        TaskStep { label, params: SkillParameters::default(), source_segment: segment, transcript: String::new() }
    }

    fn rules(labels: &[TaskLabel]) -> Vec<GmrRule> {
        match validate_gmr(labels) {
            Ok(()) => Vec::new(),
            Err(v) => v.into_iter().map(|v| v.rule).collect(),
        }
    }

    #[test]
    fn table_one_patterns_are_valid() {
        for pattern in [
            vec![Grasp, Ptg11, Ptg12, Ptg13, Release],
            vec![Grasp, Ptg31, Release],
            vec![Grasp, Ptg33, Release],
            vec![Grasp, Ptg51, Release],
            vec![Grasp, Ptg53, Release],
        ] {
            assert_eq!(validate_gmr(&pattern), Ok(()), "{pattern:?}");
        }
    }

    #[test]
    fn repeated_bring_is_valid() {
        assert_eq!(validate_gmr(&[Grasp, Ptg11, Ptg12, Ptg12, Ptg12, Ptg13, Release]), Ok(()));
    }

    #[test]
    fn missing_release_is_reported_at_last_position() {
        let v = validate_gmr(&[Grasp, Ptg11, Ptg12]).unwrap_err();
        assert_eq!(v, vec![Violation { position: 2, rule: GmrRule::MustEndWithRelease }]);
        assert_eq!(v[0].rule.message(), "must end with Release");
    }

    #[test]
    fn bare_grasp_release_has_no_manipulative_task() {
        assert_eq!(rules(&[Grasp, Release]), vec![GmrRule::NoManipulativeTask]);
        assert_eq!(rules(&[]), vec![GmrRule::Empty]);
        assert_eq!(rules(&[Grasp]), vec![GmrRule::MustEndWithRelease, GmrRule::NoManipulativeTask]);
    }

    #[test]
    fn boundary_labels_moved_inward_are_rejected() {
        assert_eq!(rules(&[Ptg11, Grasp, Ptg12, Release]), vec![GmrRule::MustStartWithGrasp, GmrRule::BoundaryInInterior]);
        assert_eq!(rules(&[Grasp, Ptg11, Release, Ptg13]), vec![GmrRule::MustEndWithRelease, GmrRule::BoundaryInInterior]);
    }

    #[test]
    fn label_codes_are_closed() {
        for l in TaskLabel::ALL {
            assert_eq!(TaskLabel::from_code(l.code()), Some(l));
        }
        assert_eq!(TaskLabel::from_code("PTG5"), Some(Ptg51));
        assert_eq!(TaskLabel::from_code("PTG99"), None);
        assert_eq!(TaskLabel::ALL.iter().filter(|l| l.is_boundary()).count(), 2);
    }

    #[test]
    fn serialized_step_list_reads_in_order() {
        let model = TaskModel {
            steps: [Grasp, Ptg11, Ptg12, Ptg13, Release].iter().enumerate().map(|(i, &l)| step(l, i)).collect(),
            metadata: Metadata::default(),
        };
        let text = model.to_text();
        let labels: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("step "))
            .map(|l| l.split_once("label=").unwrap().1)
            .collect();
        assert_eq!(labels, ["Grasp", "PTG11", "PTG12", "PTG13", "Release"]);
        assert_eq!(TaskModel::parse(&text).unwrap(), model);
    }

    #[test]
    fn unknown_label_error_names_token_and_line() {
        let text = "taskmodel v1\nmeta bundle = \"b\"\nmeta created = \"c\"\nmeta tool = \"t\"\nstep 0: label=PTG99\n  segment = 0\n  transcript = \"\"\n";
        let e = TaskModel::parse(text).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("PTG99"), "{e}");
    }

    #[test]
    fn gmr_invalid_document_is_rejected() {
        let model = TaskModel { steps: vec![step(Grasp, 0), step(Release, 1)], metadata: Metadata::default() };
        let e = TaskModel::parse(&model.to_text()).unwrap_err();
        assert!(e.message.contains("no manipulative interior task"), "{e}");
    }

    #[test]
    fn full_parameters_round_trip() {
        let mut params = SkillParameters {
            object_name: Some("refrigerator door".into()),
            object_position: Some(Vec3::new(0.1234567, -0.5, 1.25)),
            hand_laterality: Some(Hand::Right),
            grasp_type: Some("power \"cyl\"".into()),
            hand_trajectory: Some(vec![
                TrajectoryPoint { time: 0.1, position: Vec3::new(0.0, 0.0, 1.0) },
                TrajectoryPoint { time: 1.0 / 3.0, position: Vec3::new(-0.000_000_4, 0.2, 1.0) },
            ]),
            hinge: Some(HingeParams {
                center: Vec3::new(0.3, 0.0, 1.0),
                axis: Vec3::new(0.0, 0.6, 0.8),
                radius: 0.31,
                start_angle: 0.0,
                end_angle: 1.2345678901234,
                sense: HingeSense::Closing,
            }),
            start_pose: ArmPoseCode::new([0, 4, 12, 25]),
            end_pose: ArmPoseCode::new([1, 2, 3, 4]),
        };
        params = params.quantized();
        let mut model = TaskModel {
            steps: vec![step(Grasp, 1), step(Ptg51, 2), step(Release, 4)],
            metadata: Metadata { bundle_id: "door".into(), created: "t0".into(), tool_version: "x".into() },
        };
        model.steps[1].params = params;
        model.steps[1].transcript = "Open the fridge.\nThen stop.".into();
        let text = model.to_text();
        assert!(text.contains("param object_position = 0.123457,-0.500000,1.250000"), "{text}");
        assert_eq!(TaskModel::parse(&text).unwrap(), model);
    }

    #[test]
    fn trajectory_must_increase() {
        let text = "taskmodel v1\nmeta bundle = \"\"\nmeta created = \"\"\nmeta tool = \"\"\n\
step 0: label=Grasp\n  segment = 0\n  transcript = \"\"\n\
step 1: label=PTG12\n  segment = 1\n  transcript = \"\"\n  param hand_trajectory = 2\n    1 0.000000,0.000000,1.000000\n    1 0.000000,0.000000,1.000000\n\
step 2: label=Release\n  segment = 2\n  transcript = \"\"\n";
        let e = TaskModel::parse(text).unwrap_err();
        assert_eq!(e.line, 13);
    }

    #[test]
    fn params_out_of_order_rejected() {
        let text = "taskmodel v1\nmeta bundle = \"\"\nmeta created = \"\"\nmeta tool = \"\"\n\
step 0: label=Grasp\n  segment = 0\n  transcript = \"\"\n  param hand_laterality = left\n  param object_name = \"cup\"\n";
        let e = TaskModel::parse(text).unwrap_err();
        assert_eq!(e.line, 9);
    }
}
