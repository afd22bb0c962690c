//! Seeded synthetic demonstrations with ground truth.
//!
//! Video is a bright block moving over a textured background: the
//! segmentation chain only sees luminance change, so a block is as good a
//! test subject as a rendered hand.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use ites_core::geom::{Point2, Vec3};
use ites_core::recognition::Corpus;
use ites_core::skillparams::{project, CameraIntrinsics, Detection, DetectionKind, GraspDistribution};
use ites_core::taskmodel::{HingeParams, HingeSense};
use ites_core::TaskLabel;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::bundle::{Intrinsics, Manifest, MANIFEST};
use crate::error::{Error, Result};
use crate::formats::{self, Utterance};
use crate::store::Action;

pub const SCENARIOS: [&str; 4] = ["pick_bring_place", "throw_away", "open_door", "shelf_multibring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Move,
    Pause,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopGoConfig {
    pub fps: f64,
    /// Frame width and height in pixels.
    pub size: usize,
    /// Block side in pixels.
    pub block: f64,
    /// Per-pixel Gaussian noise, gray levels.
    pub noise: f64,
    pub seed: u64,
}

impl Default for StopGoConfig {
    fn default() -> Self {
        StopGoConfig { fps: 30.0, size: 128, block: 24.0, noise: 2.0, seed: 0 }
    }
}

/// Rendered stop-and-go video.
#[derive(Debug, Clone, PartialEq)]
pub struct StopGo {
    pub size: usize,
    pub fps: f64,
    pub frames: Vec<Vec<u8>>,
    /// Block center per frame, pixels.
    pub centers: Vec<Point2>,
    /// Center frame of every pause that has motion on both sides.
    pub truth: Vec<usize>,
    /// Frame range of every script entry.
    pub spans: Vec<(Mode, Range<usize>)>,
}

fn timeline(script: &[(Mode, f64)], fps: f64) -> Result<Vec<(Mode, Range<usize>)>> {
    if script.is_empty() {
        return Err(Error::Generator("empty script".into()));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Generator(format!("fps must be positive, got {fps}")));
    }
    let mut spans = Vec::with_capacity(script.len());
    let mut t = 0.0;
    for (i, &(mode, d)) in script.iter().enumerate() {
        if !(d >= 0.5 && d.is_finite()) {
            return Err(Error::Generator(format!("entry {i}: duration {d} s below 0.5 s")));
        }
        if i > 0 && script[i - 1].0 == mode {
            return Err(Error::Generator(format!("entry {i}: modes must alternate")));
        }
        let start = (t * fps).round() as usize;
        t += d;
        spans.push((mode, start..(t * fps).round() as usize));
    }
    Ok(spans)
}

fn min_jerk(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// A hand motion for one move entry.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Motion {
    Line(Vec3),
    /// Rotation about `axis` through `center` by `angle` radians.
    Arc { center: Vec3, axis: Vec3, angle: f64 },
}

fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

impl Motion {
    fn at(self, from: Vec3, s: f64) -> Vec3 {
        match self {
            Motion::Line(to) => from + (to - from) * s,
            Motion::Arc { center, axis, angle } => center + rotate(from - center, axis, angle * s),
        }
    }
}

/// Per-frame positions: stationary during pauses, minimum-jerk along each
/// motion during moves.
fn sample_path(spans: &[(Mode, Range<usize>)], start: Vec3, motions: &[Motion]) -> Vec<Vec3> {
    let total = spans.last().map_or(0, |s| s.1.end);
    let mut out = Vec::with_capacity(total);
    let mut here = start;
    let mut motions = motions.iter();
    for (mode, range) in spans {
        match mode {
            Mode::Pause => out.extend(range.clone().map(|_| here)),
            Mode::Move => {
                let m = *motions.next().expect("one motion per move");
                let n = range.len() as f64;
                out.extend((0..range.len()).map(|k| m.at(here, min_jerk(k as f64 / n))));
                here = m.at(here, 1.0);
            }
        }
    }
    out
}

fn interior_pause_centers(spans: &[(Mode, Range<usize>)]) -> Vec<usize> {
    spans
        .iter()
        .enumerate()
        .filter(|(i, (mode, _))| *mode == Mode::Pause && *i > 0 && *i + 1 < spans.len())
        .map(|(_, (_, r))| (r.start + r.end - 1) / 2)
        .collect()
}

struct Renderer {
    size: usize,
    block: f64,
    background: Vec<f64>,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl Renderer {
    fn new(cfg: &StopGoConfig) -> Result<Renderer> {
        if cfg.size < 8 || !(cfg.block > 0.0) || !(cfg.noise >= 0.0) {
            return Err(Error::Generator("size ≥ 8, block > 0 and noise ≥ 0 required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let waves: Vec<[f64; 4]> = (0..6)
            .map(|_| {
                [
                    rng.random_range(4.0..14.0),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let mut background = Vec::with_capacity(cfg.size * cfg.size);
        for y in 0..cfg.size {
            for x in 0..cfg.size {
                let v: f64 = waves.iter().map(|w| w[0] * (w[1] * x as f64 + w[2] * y as f64 + w[3]).sin()).sum();
                background.push(80.0 + v);
            }
        }
        let noise = (cfg.noise > 0.0).then(|| Normal::new(0.0, cfg.noise).expect("valid sigma"));
        Ok(Renderer { size: cfg.size, block: cfg.block, background, noise, rng })
    }

    fn coverage(lo: f64, hi: f64, px: usize) -> f64 {
        let (a, b) = (px as f64, px as f64 + 1.0);
        (hi.min(b) - lo.max(a)).clamp(0.0, 1.0)
    }

    fn render(&mut self, center: Point2) -> Vec<u8> {
        let h = self.block / 2.0;
        let cx: Vec<f64> = (0..self.size).map(|x| Self::coverage(center.x - h, center.x + h, x)).collect();
        let mut out = Vec::with_capacity(self.size * self.size);
        for y in 0..self.size {
            let cy = Self::coverage(center.y - h, center.y + h, y);
            for (x, cxx) in cx.iter().enumerate() {
                let c = cxx * cy;
                let mut v = self.background[y * self.size + x] * (1.0 - c) + 230.0 * c;
                if let Some(n) = &self.noise {
                    v += n.sample(&mut self.rng);
                }
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

fn render_all(cfg: &StopGoConfig, centers: &[Point2]) -> Result<Vec<Vec<u8>>> {
    let mut r = Renderer::new(cfg)?;
    Ok(centers.iter().map(|&c| r.render(c)).collect())
}

/// Renders a stop-and-go script. Each move goes to a fresh random point at
/// least a quarter of the frame away.
pub fn gen_stopgo(script: &[(Mode, f64)], cfg: &StopGoConfig) -> Result<StopGo> {
    let spans = timeline(script, cfg.fps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5757);
    let margin = cfg.block / 2.0 + 4.0;
    let (lo, hi) = (margin, cfg.size as f64 - margin);
    if hi - lo < cfg.size as f64 / 2.0 {
        return Err(Error::Generator("block too large for the frame".into()));
    }
    let mut pick = |from: Option<Vec3>| loop {
        let p = Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), 0.0);
        if from.is_none_or(|f| (p - f).norm() >= cfg.size as f64 / 4.0) {
            return p;
        }
    };
    let start = pick(None);
    let mut here = start;
    let mut motions = Vec::new();
    for _ in spans.iter().filter(|s| s.0 == Mode::Move) {
        here = pick(Some(here));
        motions.push(Motion::Line(here));
    }
    let centers: Vec<Point2> = sample_path(&spans, start, &motions).into_iter().map(|p| Point2::new(p.x, p.y)).collect();
    let frames = render_all(cfg, &centers)?;
    Ok(StopGo { size: cfg.size, fps: cfg.fps, frames, centers, truth: interior_pause_centers(&spans), spans })
}

/// A random script of `pauses` interior pauses with durations drawn from
/// `durations`, starting and ending with a move.
pub fn random_script(pauses: usize, durations: Range<f64>, seed: u64) -> Vec<(Mode, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut script = vec![(Mode::Move, rng.random_range(durations.clone()))];
    for _ in 0..pauses {
        script.push((Mode::Pause, rng.random_range(durations.clone())));
        script.push((Mode::Move, rng.random_range(durations.clone())));
    }
    script
}

fn frame_name(i: usize) -> PathBuf {
    PathBuf::from(format!("frames/{i:05}.pgm"))
}

fn write_frames(dir: &Path, size: usize, frames: &[Vec<u8>]) -> Result<Vec<PathBuf>> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(Error::io(&frames_dir))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let rel = frame_name(i);
            formats::write_pgm(&dir.join(&rel), size, size, f)?;
            Ok(rel)
        })
        .collect()
}

fn write_truth<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let truth = dir.join("truth");
    fs::create_dir_all(&truth).map_err(Error::io(&truth))?;
    let path = truth.join(name);
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(&path, 0, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(&path, 0, e.to_string()))?;
    fs::write(&path, bytes).map_err(Error::io(&path))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.to_toml()).map_err(Error::io(&path))
}

#[derive(Serialize)]
struct StopRow {
    frame: usize,
}

/// Writes a stop-and-go bundle: frames, the block track as right-hand
/// detections at 800 mm, and `truth/stops.csv`.
pub fn write_stopgo(stopgo: &StopGo, dir: &Path, id: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let frames = write_frames(dir, stopgo.size, &stopgo.frames)?;
    let detections: Vec<Detection> = stopgo
        .centers
        .iter()
        .enumerate()
        .map(|(frame, c)| Detection { frame, kind: DetectionKind::RightHand, x: c.x, y: c.y, z: 800.0, confidence: 1.0 })
        .collect();
    formats::write_detections(&dir.join("detections.csv"), &detections)?;
    write_truth(dir, "stops.csv", stopgo.truth.iter().map(|&frame| StopRow { frame }))?;
    write_manifest(
        dir,
        &Manifest {
            id: Some(id.to_string()),
            video_rate: Some(stopgo.fps),
            detections: vec!["detections.csv".into()],
            frames,
            ..Manifest::default()
        },
    )
}

/// Points on a circular arc with isotropic Gaussian noise, and the hinge
/// parameters a perfect fit would report.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub points: Vec<Vec3>,
    pub truth: HingeParams,
}

#[allow(clippy::too_many_arguments)]
pub fn gen_arc(
    center: Vec3,
    axis: Vec3,
    radius: f64,
    angles: Range<f64>,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Arc> {
    if n < 3 {
        return Err(Error::Generator("at least three points required".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) || !(sigma >= 0.0) || !center.is_finite() {
        return Err(Error::Generator("radius must be positive, sigma non-negative".into()));
    }
    if !(angles.end > angles.start && angles.start.is_finite() && angles.end.is_finite()) {
        return Err(Error::Generator("empty angle range".into()));
    }
    let axis = axis.normalized(1e-12).ok_or_else(|| Error::Generator("zero axis".into()))?;
    let helper = if axis.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let u = axis.cross(helper).normalized(1e-12).expect("helper not parallel");
    let v = axis.cross(u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Generator(e.to_string()))?;
    let points = (0..n)
        .map(|i| {
            let t = angles.start + (angles.end - angles.start) * i as f64 / (n - 1) as f64;
            let p = center + (u * t.cos() + v * t.sin()) * radius;
            if sigma > 0.0 {
                p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p
            }
        })
        .collect();
    let sense = if axis.dot(Vec3::new(0.0, -1.0, 0.0)) >= 0.0 { HingeSense::Opening } else { HingeSense::Closing };
    let truth = HingeParams { center, axis, radius, start_angle: 0.0, end_angle: angles.end - angles.start, sense };
    Ok(Arc { points, truth })
}

/// Camera used by every scenario.
pub const SCENARIO_INTRINSICS: Intrinsics = Intrinsics { fx: 110.0, fy: 110.0, cx: 64.0, cy: 64.0 };

const PAUSE: f64 = 1.5;
const MOVE: f64 = 1.5;
const GRASPS: [&str; 3] = ["lateral", "power", "precision"];
const OBJECTS: [&str; 9] = ["box", "can", "cup", "fridge", "handle", "shelf", "table", "trash bin", "counter"];

/// One move of a scenario and what the demonstrator says during it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSegment {
    /// None for motion outside the operation, which the review ignores.
    pub label: Option<TaskLabel>,
    pub utterances: Vec<String>,
}

/// A complete synthetic demonstration with everything needed to write a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub expected: Vec<TaskLabel>,
    pub segments: Vec<ScenarioSegment>,
    /// The user edits that turn the detected segments into the expected model.
    pub review: Vec<Action>,
    pub video: StopGo,
    pub detections: Vec<Detection>,
    pub grasp_scores: BTreeMap<usize, GraspDistribution>,
    pub grasp_priors: BTreeMap<String, GraspDistribution>,
    pub utterances: Vec<Utterance>,
}

struct Plan {
    start: Vec3,
    moves: Vec<(Option<TaskLabel>, Motion, Vec<String>)>,
    object: Vec3,
    review: Vec<Action>,
}

fn phrase(rng: &mut ChaCha8Rng, bank: &[&str], object: &str, place: &str) -> String {
    bank.choose(rng).expect("non-empty bank").replace("{o}", object).replace("{d}", place)
}

pub const GRASP_PHRASES: [&str; 3] = ["Grasp the {o}.", "Grab the {o}.", "Take hold of the {o}."];
pub const PICK_PHRASES: [&str; 3] = ["Pick up the {o}.", "Lift the {o} off the table.", "Pick the {o} up."];
pub const BRING_PHRASES: [&str; 3] = ["Bring the {o} to the {d}.", "Carry the {o} over to the {d}.", "Move the {o} toward the {d}."];
pub const PLACE_PHRASES: [&str; 3] = ["Place the {o} on the {d}.", "Put the {o} down on the {d}.", "Set the {o} on the {d}."];
pub const RELEASE_PHRASES: [&str; 3] = ["Release the {o}.", "Let go of the {o}.", "Release your grip on the {o}."];
pub const OPEN_PHRASES: [&str; 3] = ["Open the {o} door.", "Pull the {o} door open.", "Swing the {o} door open."];

fn plan(name: &str, rng: &mut ChaCha8Rng) -> Result<Plan> {
    let l = |x, y, z| Motion::Line(Vec3::new(x, y, z));
    let rest = Vec3::new(0.30, 0.30, 0.9);
    let mut say = |bank: &[&str], o: &str, d: &str| vec![phrase(rng, bank, o, d)];
    let plan = match name {
        "pick_bring_place" => {
            let grasp = say(&GRASP_PHRASES, "box", "");
            let typo = grasp[0].replacen("Grasp", "Grass", 1).replacen("Grab", "Crab", 1).replacen("Take hold", "Take old", 1);
            Plan {
                start: rest,
                moves: vec![
                    (None, l(0.12, 0.12, 0.9), vec![]),
                    (Some(TaskLabel::Grasp), l(-0.05, 0.20, 0.9), vec![typo]),
                    (Some(TaskLabel::Ptg11), l(-0.05, 0.02, 0.9), say(&PICK_PHRASES, "box", "")),
                    (Some(TaskLabel::Ptg12), l(-0.22, -0.06, 0.9), say(&BRING_PHRASES, "box", "shelf")),
                    (Some(TaskLabel::Ptg12), l(-0.30, -0.24, 0.9), vec!["Keep carrying it toward the shelf.".into()]),
                    (Some(TaskLabel::Ptg13), l(-0.30, -0.08, 0.9), say(&PLACE_PHRASES, "box", "shelf")),
                    (Some(TaskLabel::Release), l(-0.10, -0.14, 0.9), say(&RELEASE_PHRASES, "box", "")),
                    (None, l(0.15, 0.25, 0.9), vec![]),
                ],
                object: Vec3::new(-0.05, 0.20, 0.9),
                review: vec![
                    Action::Ignore { index: 0 },
                    Action::Ignore { index: 7 },
                    Action::Merge { first: 3, second: 4 },
                    Action::ConfirmSegments,
                    Action::SetTranscript { index: 1, text: grasp[0].clone() },
                ],
            }
        }
        "throw_away" => Plan {
            start: rest,
            moves: vec![
                (None, l(0.12, 0.10, 0.9), vec![]),
                (Some(TaskLabel::Grasp), l(-0.08, 0.18, 0.9), say(&GRASP_PHRASES, "can", "")),
                (Some(TaskLabel::Ptg11), l(-0.08, -0.02, 0.9), say(&PICK_PHRASES, "can", "")),
                (Some(TaskLabel::Ptg12), l(-0.32, 0.05, 0.9), say(&BRING_PHRASES, "can", "trash bin")),
                (Some(TaskLabel::Release), l(-0.30, -0.14, 0.9), say(&RELEASE_PHRASES, "can", "")),
                (None, l(0.10, 0.25, 0.9), vec![]),
            ],
            object: Vec3::new(-0.08, 0.18, 0.9),
            review: vec![Action::Ignore { index: 0 }, Action::Ignore { index: 5 }, Action::ConfirmSegments],
        },
        "open_door" => {
            let hinge = Vec3::new(-0.2, 0.05, 0.9);
            Plan {
                start: rest,
                moves: vec![
                    (None, l(0.30, 0.05, 0.9), vec![]),
                    (Some(TaskLabel::Grasp), l(0.20, 0.05, 0.9), say(&GRASP_PHRASES, "handle", "")),
                    (
                        Some(TaskLabel::Ptg51),
                        Motion::Arc { center: hinge, axis: Vec3::new(0.0, -1.0, 0.0), angle: std::f64::consts::FRAC_PI_2 },
                        say(&OPEN_PHRASES, "fridge", ""),
                    ),
                    (Some(TaskLabel::Release), l(0.05, 0.25, 1.1), say(&RELEASE_PHRASES, "handle", "")),
                    (None, l(0.30, 0.30, 0.9), vec![]),
                ],
                object: Vec3::new(0.20, 0.05, 0.9),
                review: vec![Action::Ignore { index: 0 }, Action::Ignore { index: 4 }, Action::ConfirmSegments],
            }
        }
        "shelf_multibring" => Plan {
            start: rest,
            moves: vec![
                (None, l(0.14, 0.12, 0.9), vec![]),
                (Some(TaskLabel::Grasp), l(-0.04, 0.22, 0.9), say(&GRASP_PHRASES, "cup", "")),
                (Some(TaskLabel::Ptg11), l(-0.04, 0.04, 0.9), say(&PICK_PHRASES, "cup", "")),
                (Some(TaskLabel::Ptg12), l(0.18, -0.02, 0.9), say(&BRING_PHRASES, "cup", "counter")),
                (Some(TaskLabel::Ptg12), l(0.10, -0.22, 0.9), say(&BRING_PHRASES, "cup", "top shelf")),
                (Some(TaskLabel::Ptg12), l(-0.14, -0.26, 0.9), say(&BRING_PHRASES, "cup", "back of the shelf")),
                (Some(TaskLabel::Ptg13), l(-0.14, -0.10, 0.9), say(&PLACE_PHRASES, "cup", "shelf")),
                (Some(TaskLabel::Release), l(0.06, -0.12, 0.9), say(&RELEASE_PHRASES, "cup", "")),
                (None, l(0.28, 0.22, 0.9), vec![]),
            ],
            object: Vec3::new(-0.04, 0.22, 0.9),
            review: vec![Action::Ignore { index: 0 }, Action::Ignore { index: 8 }, Action::ConfirmSegments],
        },
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(plan)
}

fn prior(object: &str) -> GraspDistribution {
    let p = match object {
        "box" => [0.2, 0.7, 0.1],
        "can" => [0.15, 0.6, 0.25],
        "cup" => [0.3, 0.4, 0.3],
        _ => [0.5, 0.4, 0.1],
    };
    GRASPS.iter().map(|g| g.to_string()).zip(p).collect()
}

/// Builds a named scenario. Same name and seed give the same scenario.
pub fn gen_scenario(name: &str, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = plan(name, &mut rng)?;
    let k = CameraIntrinsics::new(SCENARIO_INTRINSICS.fx, SCENARIO_INTRINSICS.fy, SCENARIO_INTRINSICS.cx, SCENARIO_INTRINSICS.cy)
        .expect("valid intrinsics");
    let mut script = Vec::new();
    for (i, _) in plan.moves.iter().enumerate() {
        if i > 0 {
            script.push((Mode::Pause, PAUSE));
        }
        script.push((Mode::Move, MOVE));
    }
    let cfg = StopGoConfig { seed, ..StopGoConfig::default() };
    let spans = timeline(&script, cfg.fps)?;
    let motions: Vec<Motion> = plan.moves.iter().map(|m| m.1).collect();
    let hand = sample_path(&spans, plan.start, &motions);
    let centers: Vec<Point2> = hand.iter().map(|&p| project(p, &k).expect("in front of the camera")).collect();
    let frames = render_all(&cfg, &centers)?;
    let video = StopGo { size: cfg.size, fps: cfg.fps, frames, centers, truth: interior_pause_centers(&spans), spans: spans.clone() };

    let move_spans: Vec<Range<usize>> = spans.iter().filter(|s| s.0 == Mode::Move).map(|s| s.1.clone()).collect();
    let mut utterances = Vec::new();
    for ((_, _, said), span) in plan.moves.iter().zip(&move_spans) {
        let n = said.len() as f64;
        for (j, text) in said.iter().enumerate() {
            let t0 = span.start as f64 / cfg.fps;
            let len = span.len() as f64 / cfg.fps;
            let mid = t0 + len * (j as f64 + 1.0) / (n + 1.0);
            let start = ((mid - 0.3) * 1000.0).round() / 1000.0;
            utterances.push(Utterance { start, end: start + 0.6, text: text.clone() });
        }
    }

    let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ 0xd37);
    let px = Normal::new(0.0, 0.5).expect("sigma");
    let mm = Normal::new(0.0, 2.0).expect("sigma");
    let m = Normal::new(0.0, 0.003).expect("sigma");
    let left = Vec3::new(-0.35, 0.30, 0.95);
    let shoulders = [Vec3::new(-0.18, -0.25, 1.2), Vec3::new(0.18, -0.25, 1.2)];
    let grasp_end = move_spans[plan.moves.iter().position(|m| m.0 == Some(TaskLabel::Grasp)).expect("grasp")].end;
    let mut detections = Vec::new();
    for (frame, &right) in hand.iter().enumerate() {
        let image = |kind, p: Vec3, rng: &mut ChaCha8Rng| {
            let q = project(p, &k).expect("in front of the camera");
            Detection {
                frame,
                kind,
                x: q.x + px.sample(rng),
                y: q.y + px.sample(rng),
                z: p.z * 1000.0 + mm.sample(rng),
                confidence: 0.95,
            }
        };
        let object = if frame < grasp_end { plan.object } else { right + Vec3::new(0.0, 0.03, 0.0) };
        detections.push(image(DetectionKind::Object, object, &mut jitter));
        detections.push(image(DetectionKind::LeftHand, left, &mut jitter));
        detections.push(image(DetectionKind::RightHand, right, &mut jitter));
        for (side, wrist) in [left, right].into_iter().enumerate() {
            let shoulder = shoulders[side];
            let elbow = (shoulder + wrist) * 0.5 + Vec3::new(0.0, 0.12, 0.05);
            let kinds = if side == 0 {
                [DetectionKind::LeftShoulder, DetectionKind::LeftElbow, DetectionKind::LeftWrist]
            } else {
                [DetectionKind::RightShoulder, DetectionKind::RightElbow, DetectionKind::RightWrist]
            };
            for (kind, p) in kinds.into_iter().zip([shoulder, elbow, wrist]) {
                detections.push(Detection {
                    frame,
                    kind,
                    x: p.x + m.sample(&mut jitter),
                    y: p.y + m.sample(&mut jitter),
                    z: p.z + m.sample(&mut jitter),
                    confidence: 0.95,
                });
            }
        }
    }

    let scores: GraspDistribution = GRASPS.iter().map(|g| g.to_string()).zip([0.25, 0.5, 0.25]).collect();
    let grasp_scores = (0..hand.len()).map(|f| (f, scores.clone())).collect();
    let grasp_priors = ["box", "can", "cup", "handle"].iter().map(|o| (o.to_string(), prior(o))).collect();

    let expected = plan.moves.iter().filter_map(|m| m.0).collect::<Vec<_>>();
    let mut expected_dedup: Vec<TaskLabel> = Vec::new();
    for (i, l) in expected.iter().enumerate() {
        // The over-split bring is two moves but one task after review.
        if name == "pick_bring_place" && i > 0 && *l == TaskLabel::Ptg12 && expected[i - 1] == TaskLabel::Ptg12 {
            continue;
        }
        expected_dedup.push(*l);
    }
    let segments = plan.moves.iter().map(|(label, _, said)| ScenarioSegment { label: *label, utterances: said.clone() }).collect();
    Ok(Scenario {
        name: name.to_string(),
        expected: expected_dedup,
        segments,
        review: plan.review,
        video,
        detections,
        grasp_scores,
        grasp_priors,
        utterances,
    })
}

#[derive(Serialize)]
struct LabelRow {
    label: &'static str,
}

#[derive(Serialize)]
struct ReviewRow {
    action: &'static str,
    first: Option<usize>,
    second: Option<usize>,
    text: Option<String>,
}

fn review_row(a: &Action) -> ReviewRow {
    let row = |action, first, second, text| ReviewRow { action, first, second, text };
    match a {
        Action::Merge { first, second } => row("merge", Some(*first), Some(*second), None),
        Action::Ignore { index } => row("ignore", Some(*index), None, None),
        Action::ConfirmSegments => row("confirm_segments", None, None, None),
        Action::SetTranscript { index, text } => row("set_transcript", Some(*index), None, Some(text.clone())),
        Action::ConfirmTranscripts => row("confirm_transcripts", None, None, None),
        Action::ReopenTranscripts => row("reopen_transcripts", None, None, None),
        Action::Compile => row("compile", None, None, None),
        Action::Revert => row("revert", None, None, None),
        Action::Discard => row("discard", None, None, None),
    }
}

/// Writes the scenario as a bundle directory, with `truth/stops.csv`,
/// `truth/labels.csv` and `truth/review.csv` alongside.
pub fn write_scenario(s: &Scenario, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let frames = write_frames(dir, s.video.size, &s.video.frames)?;
    formats::write_detections(&dir.join("detections.csv"), &s.detections)?;
    formats::write_grasp_scores(&dir.join("grasp_scores.csv"), &s.grasp_scores)?;
    formats::write_grasp_priors(&dir.join("grasp_priors.csv"), &s.grasp_priors)?;
    formats::write_utterances(&dir.join("transcripts.csv"), &s.utterances)?;
    let objects: String = OBJECTS.iter().map(|o| format!("{o}\n")).collect();
    fs::write(dir.join("objects.txt"), objects).map_err(Error::io(dir.join("objects.txt")))?;
    write_truth(dir, "stops.csv", s.video.truth.iter().map(|&frame| StopRow { frame }))?;
    write_truth(dir, "labels.csv", s.expected.iter().map(|l| LabelRow { label: l.code() }))?;
    write_truth(dir, "review.csv", s.review.iter().map(review_row))?;
    write_manifest(
        dir,
        &Manifest {
            id: Some(s.name.clone()),
            video_rate: Some(s.video.fps),
            transcripts: Some("transcripts.csv".into()),
            detections: vec!["detections.csv".into()],
            grasp_scores: Some("grasp_scores.csv".into()),
            objects: Some("objects.txt".into()),
            grasp_priors: Some("grasp_priors.csv".into()),
            intrinsics: Some(SCENARIO_INTRINSICS),
            frames,
            ..Manifest::default()
        },
    )
}

/// Reads back `truth/review.csv`.
pub fn read_review(path: &Path) -> Result<Vec<Action>> {
    #[derive(serde::Deserialize)]
    struct Row {
        action: String,
        first: Option<usize>,
        second: Option<usize>,
        text: Option<String>,
    }
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| Error::format(path, line, e.to_string()))?;
        let need = |v: Option<usize>| v.ok_or_else(|| Error::format(path, line, "missing index"));
        out.push(match r.action.as_str() {
            "merge" => Action::Merge { first: need(r.first)?, second: need(r.second)? },
            "ignore" => Action::Ignore { index: need(r.first)? },
            "confirm_segments" => Action::ConfirmSegments,
            "set_transcript" => Action::SetTranscript { index: need(r.first)?, text: r.text.unwrap_or_default() },
            "confirm_transcripts" => Action::ConfirmTranscripts,
            "reopen_transcripts" => Action::ReopenTranscripts,
            "compile" => Action::Compile,
            "revert" => Action::Revert,
            "discard" => Action::Discard,
            other => return Err(Error::format(path, line, format!("unknown action {other:?}"))),
        });
    }
    Ok(out)
}

const CORPUS_TEMPLATES: [(TaskLabel, &[&str]); 12] = [
    (TaskLabel::Grasp, &["grab the {o}", "grasp the {o}", "take hold of the {o}", "hold on to the {o} with your hand"]),
    (TaskLabel::Ptg11, &["pick up the {o}", "lift the {o}", "raise the {o} from the {d}", "pick the {o} up off the {d}"]),
    (TaskLabel::Ptg12, &["bring the {o} to the {d}", "carry the {o} over to the {d}", "move the {o} toward the {d}", "bring it over to the {d}"]),
    (TaskLabel::Ptg13, &["place the {o} on the {d}", "put the {o} down on the {d}", "set the {o} on the {d}", "lower the {o} onto the {d}"]),
    (TaskLabel::Ptg51, &["open the {h}", "pull the {h} open", "swing the {h} open", "open the door of the {h}"]),
    (TaskLabel::Ptg53, &["close the {h}", "push the {h} shut", "swing the {h} closed", "shut the door of the {h}"]),
    (TaskLabel::Stg2, &["wipe the {d} with the {t}", "clean the {d} with the {t}", "scrub the {d}", "wipe down the {d}"]),
    (TaskLabel::Stg3, &["peel the {f}", "peel the skin off the {f}", "remove the peel from the {f}", "peel the {f} with the peeler"]),
    (TaskLabel::Stg5, &["pour the {l} into the {o}", "pour some {l} into the {o}", "empty the {o} into the {d}", "pour the {l} from the {o}"]),
    (TaskLabel::Stg6, &["hold the {o} still", "keep holding the {o} steady", "hold the {o} in place", "keep the {o} steady"]),
    (TaskLabel::Mtg1, &["cut the {f} with the knife", "slice the {f}", "chop the {f} into pieces", "cut the {f} in half"]),
    (TaskLabel::Release, &["let go of the {o}", "release the {o}", "release your grip on the {o}", "open your hand and let go"]),
];

/// Augmented training corpus: `per_class` sentences for each of the twelve
/// classes, filled from templates with sampled objects and politeness words.
pub fn gen_corpus(per_class: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill = |rng: &mut ChaCha8Rng, t: &str| {
        let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).copied().unwrap_or_default().to_string();
        t.replace("{o}", &pick(rng, &["cup", "box", "bottle", "mug", "bowl", "can", "jar"]))
            .replace("{d}", &pick(rng, &["table", "shelf", "counter", "sink", "tray", "plate"]))
            .replace("{h}", &pick(rng, &["fridge", "cabinet", "microwave", "drawer", "oven"]))
            .replace("{t}", &pick(rng, &["sponge", "cloth", "towel", "brush"]))
            .replace("{f}", &pick(rng, &["apple", "potato", "carrot", "orange", "cucumber"]))
            .replace("{l}", &pick(rng, &["water", "milk", "juice", "tea"]))
    };
    let mut entries = Vec::with_capacity(per_class * CORPUS_TEMPLATES.len());
    for (label, templates) in CORPUS_TEMPLATES {
        for _ in 0..per_class {
            let template = *templates.choose(&mut rng).expect("templates");
            let body = fill(&mut rng, template);
            let prefix = ["", "please ", "now ", "next, "].choose(&mut rng).expect("prefixes");
            let suffix = ["", " please", " carefully", " slowly"].choose(&mut rng).expect("suffixes");
            let mut s = format!("{prefix}{body}{suffix}.");
            s[..1].make_ascii_uppercase();
            entries.push((s, label));
        }
    }
    Corpus::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ites_core::segmentation::{motion_signal, run_chain, ChainConfig, Frame};

    fn chain_stops(v: &StopGo) -> Vec<usize> {
        let frames: Vec<Frame> = v
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| Frame::new(v.size, v.size, f.clone(), i as f64 / v.fps).unwrap())
            .collect();
        let sig = motion_signal(&frames, 50).unwrap();
        run_chain(sig, &ChainConfig::default()).unwrap().stops.0
    }

    #[test]
    fn script_validation() {
        let cfg = StopGoConfig::default();
        assert!(gen_stopgo(&[], &cfg).is_err());
        assert!(gen_stopgo(&[(Mode::Move, 0.4)], &cfg).is_err());
        assert!(gen_stopgo(&[(Mode::Move, 1.0), (Mode::Move, 1.0)], &cfg).is_err());
    }

    #[test]
    fn three_pauses_are_recovered() {
        let m = |d| (Mode::Move, d);
        let p = |d| (Mode::Pause, d);
        let v = gen_stopgo(&[m(1.5), p(1.5), m(1.5), p(1.5), m(1.5), p(1.5), m(1.5)], &StopGoConfig::default()).unwrap();
        assert_eq!(v.truth.len(), 3);
        let stops = chain_stops(&v);
        assert_eq!(stops.len(), 3, "{stops:?} vs {:?}", v.truth);
        for (s, t) in stops.iter().zip(&v.truth) {
            assert!(s.abs_diff(*t) <= 2, "{stops:?} vs {:?}", v.truth);
        }
    }

    #[test]
    fn pause_only_is_still() {
        let v = gen_stopgo(&[(Mode::Pause, 2.0)], &StopGoConfig { noise: 0.0, ..StopGoConfig::default() }).unwrap();
        assert!(v.truth.is_empty());
        assert!(v.frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn move_only_has_no_interior_stops() {
        let v = gen_stopgo(&[(Mode::Move, 3.0)], &StopGoConfig::default()).unwrap();
        assert!(chain_stops(&v).is_empty());
    }

    #[test]
    fn generation_is_reproducible() {
        let script = random_script(3, 0.5..3.0, 9);
        let cfg = StopGoConfig { seed: 4, ..StopGoConfig::default() };
        assert_eq!(gen_stopgo(&script, &cfg).unwrap(), gen_stopgo(&script, &cfg).unwrap());
        assert_eq!(gen_scenario("open_door", 3).unwrap(), gen_scenario("open_door", 3).unwrap());
        assert_ne!(gen_stopgo(&script, &StopGoConfig { seed: 5, ..cfg }).unwrap().frames, gen_stopgo(&script, &cfg).unwrap().frames);
    }

    #[test]
    fn noiseless_arc_lies_on_circle() {
        let c = Vec3::new(0.1, 0.2, 1.0);
        let a = gen_arc(c, Vec3::new(0.0, 2.0, 0.0), 0.3, 0.0..1.5, 20, 0.0, 1).unwrap();
        for p in &a.points {
            assert!(((*p - c).norm() - 0.3).abs() < 1e-12);
            assert!((*p - c).y.abs() < 1e-12);
        }
        assert_eq!(a.truth.sense, HingeSense::Closing);
        assert!((a.truth.sweep() - 1.5).abs() < 1e-12);
        assert!(gen_arc(c, Vec3::ZERO, 0.3, 0.0..1.0, 10, 0.0, 1).is_err());
        assert!(gen_arc(c, Vec3::new(0.0, 1.0, 0.0), 0.3, 0.0..1.0, 2, 0.0, 1).is_err());
    }

    #[test]
    fn scenario_shapes() {
        let s = gen_scenario("pick_bring_place", 0).unwrap();
        assert_eq!(s.segments.len(), 8);
        assert_eq!(s.video.truth.len(), 7);
        assert_eq!(s.expected, [TaskLabel::Grasp, TaskLabel::Ptg11, TaskLabel::Ptg12, TaskLabel::Ptg13, TaskLabel::Release]);
        let m = gen_scenario("shelf_multibring", 0).unwrap();
        assert_eq!(m.expected.iter().filter(|l| **l == TaskLabel::Ptg12).count(), 3);
        assert!(matches!(gen_scenario("juggle", 0), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn every_phrasing_classifies_with_the_seed_model() {
        use ites_core::recognition::Recognizer;
        let model = crate::pipeline::seed_model();
        let banks: [(&[&str], TaskLabel, &[(&str, &str)]); 6] = [
            (&GRASP_PHRASES, TaskLabel::Grasp, &[("box", ""), ("can", ""), ("cup", ""), ("handle", "")]),
            (&PICK_PHRASES, TaskLabel::Ptg11, &[("box", ""), ("can", ""), ("cup", "")]),
            (&BRING_PHRASES, TaskLabel::Ptg12, &[("box", "shelf"), ("can", "trash bin"), ("cup", "counter"), ("cup", "top shelf"), ("cup", "back of the shelf")]),
            (&PLACE_PHRASES, TaskLabel::Ptg13, &[("box", "shelf"), ("cup", "shelf")]),
            (&RELEASE_PHRASES, TaskLabel::Release, &[("box", ""), ("can", ""), ("cup", ""), ("handle", "")]),
            (&OPEN_PHRASES, TaskLabel::Ptg51, &[("fridge", "")]),
        ];
        for (bank, label, fills) in banks {
            for template in bank {
                for (o, d) in fills {
                    let text = template.replace("{o}", o).replace("{d}", d);
                    assert_eq!(model.predict(&text).unwrap().label, label, "{text}");
                }
            }
        }
        for template in BRING_PHRASES {
            let merged = format!("{} Keep carrying it toward the shelf.", template.replace("{o}", "box").replace("{d}", "shelf"));
            assert_eq!(model.predict(&merged).unwrap().label, TaskLabel::Ptg12, "{merged}");
        }
    }

    #[test]
    fn corpus_is_balanced_and_seeded() {
        let c = gen_corpus(5, 1);
        assert_eq!(c.len(), 60);
        assert_eq!(c.labels().len(), 12);
        assert_eq!(c.entries, gen_corpus(5, 1).entries);
    }
}
