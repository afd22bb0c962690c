//! Skill-parameter daemons.
//!
//! Each daemon turns detector output for one task segment into a parameter
//! of the task model: 3D positions by pinhole back-projection, the
//! manipulating hand, the grasp type, a circle fitted to the hand path of a
//! hinge rotation, and arm postures quantized to 26 directions. The detectors
//! themselves run out of process; their output arrives as a
//! [`DetectionTrack`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::ops::Range;

use crate::geom::{symmetric_eigen3, Point2, Vec3};
use crate::taskmodel::{ArmPoseCode, Hand, HingeParams, HingeSense, TrajectoryPoint};

#[derive(Debug, Clone, PartialEq)]
pub enum SkillError {
    InvalidDepth,
    DetectionUnavailable(&'static str),
    AmbiguousLaterality,
    GraspVocabularyMismatch,
    NotNormalized,
    InconsistentPrior,
    InsufficientPoints,
    DegenerateGeometry,
    PoorFit { rms: f64 },
    ExcessiveSweep,
    UndefinedDirection,
    TrajectoryUnavailable,
}

impl fmt::Display for SkillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkillError::InvalidDepth => f.write_str("invalid depth"),
            SkillError::DetectionUnavailable(what) => write!(f, "detection unavailable: {what}"),
            SkillError::AmbiguousLaterality => f.write_str("ambiguous laterality"),
            SkillError::GraspVocabularyMismatch => f.write_str("grasp distributions use different vocabularies"),
            SkillError::NotNormalized => f.write_str("grasp scores do not sum to 1"),
            SkillError::InconsistentPrior => f.write_str("inconsistent prior"),
            SkillError::InsufficientPoints => f.write_str("insufficient points"),
            SkillError::DegenerateGeometry => f.write_str("degenerate geometry"),
            SkillError::PoorFit { rms } => write!(f, "poor fit (rms {rms:.4} m)"),
            SkillError::ExcessiveSweep => f.write_str("sweep exceeds a full turn"),
            SkillError::UndefinedDirection => f.write_str("undefined direction"),
            SkillError::TrajectoryUnavailable => f.write_str("trajectory unavailable"),
        }
    }
}

impl core::error::Error for SkillError {}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Option<CameraIntrinsics> {
        (fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite())
            .then_some(CameraIntrinsics { fx, fy, cx, cy })
    }
}

/// Pixel `(u, v)` with depth in millimeters → camera-frame point in meters.
pub fn backproject(u: f64, v: f64, depth_mm: f64, k: &CameraIntrinsics) -> Result<Vec3, SkillError> {
    if !(depth_mm > 0.0 && depth_mm.is_finite()) {
        return Err(SkillError::InvalidDepth);
    }
    let z = depth_mm / 1000.0;
    Ok(Vec3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z))
}

/// Perspective projection; `None` for points at or behind the camera.
pub fn project(p: Vec3, k: &CameraIntrinsics) -> Option<Point2> {
    (p.z > 0.0).then(|| Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectionKind {
    Object,
    LeftHand,
    RightHand,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
}

impl DetectionKind {
    pub const ALL: [DetectionKind; 9] = [
        DetectionKind::Object,
        DetectionKind::LeftHand,
        DetectionKind::RightHand,
        DetectionKind::LeftShoulder,
        DetectionKind::LeftElbow,
        DetectionKind::LeftWrist,
        DetectionKind::RightShoulder,
        DetectionKind::RightElbow,
        DetectionKind::RightWrist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectionKind::Object => "object",
            DetectionKind::LeftHand => "left_hand",
            DetectionKind::RightHand => "right_hand",
            DetectionKind::LeftShoulder => "l_shoulder",
            DetectionKind::LeftElbow => "l_elbow",
            DetectionKind::LeftWrist => "l_wrist",
            DetectionKind::RightShoulder => "r_shoulder",
            DetectionKind::RightElbow => "r_elbow",
            DetectionKind::RightWrist => "r_wrist",
        }
    }

    pub fn parse(s: &str) -> Option<DetectionKind> {
        DetectionKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }

    /// Image-space detections carry pixels plus depth in millimeters; joints
    /// carry camera-frame meters.
    pub fn is_image_point(self) -> bool {
        matches!(self, DetectionKind::Object | DetectionKind::LeftHand | DetectionKind::RightHand)
    }

    pub fn hand(hand: Hand) -> DetectionKind {
        match hand {
            Hand::Left => DetectionKind::LeftHand,
            Hand::Right => DetectionKind::RightHand,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub kind: DetectionKind,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn pixel(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn point3(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// Detector output over a span of frames, ordered by `(frame, kind)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionTrack {
    detections: Vec<Detection>,
}

impl DetectionTrack {
    /// Sorts by `(frame, kind)`; for duplicates the last one given wins.
    pub fn new(mut detections: Vec<Detection>) -> DetectionTrack {
        detections.sort_by_key(|d| (d.frame, d.kind));
        let mut out: Vec<Detection> = Vec::with_capacity(detections.len());
        for d in detections {
            match out.last_mut() {
                Some(last) if last.frame == d.frame && last.kind == d.kind => *last = d,
                _ => out.push(d),
            }
        }
        DetectionTrack { detections: out }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn get(&self, frame: usize, kind: DetectionKind) -> Option<&Detection> {
        self.detections.binary_search_by_key(&(frame, kind), |d| (d.frame, d.kind)).ok().map(|i| &self.detections[i])
    }

    /// Detections whose frame lies in `frames`.
    pub fn within(&self, frames: Range<usize>) -> DetectionTrack {
        let lo = self.detections.partition_point(|d| d.frame < frames.start);
        let hi = self.detections.partition_point(|d| d.frame < frames.end);
        DetectionTrack { detections: self.detections[lo..hi].to_vec() }
    }

    pub fn of_kind(&self, kind: DetectionKind) -> impl Iterator<Item = &Detection> + '_ {
        self.detections.iter().filter(move |d| d.kind == kind)
    }

    fn frames(&self) -> impl DoubleEndedIterator<Item = usize> + '_ {
        let mut last = None;
        self.detections.iter().filter_map(move |d| {
            if last == Some(d.frame) {
                None
            } else {
                last = Some(d.frame);
                Some(d.frame)
            }
        })
    }
}

/// The hand nearer to the object is the manipulating one.
pub fn hand_laterality(object: Option<Point2>, left: Option<Point2>, right: Option<Point2>) -> Result<Hand, SkillError> {
    let object = object.ok_or(SkillError::DetectionUnavailable("object"))?;
    let left = left.ok_or(SkillError::DetectionUnavailable("left hand"))?;
    let right = right.ok_or(SkillError::DetectionUnavailable("right hand"))?;
    let dl = object.distance(left);
    let dr = object.distance(right);
    if libm::fabs(dl - dr) <= 1e-6 {
        Err(SkillError::AmbiguousLaterality)
    } else if dl < dr {
        Ok(Hand::Left)
    } else {
        Ok(Hand::Right)
    }
}

/// Laterality for a grasping segment: object from the first frame that has
/// one, hands from the last frame that has both.
pub fn laterality_from_track(track: &DetectionTrack) -> Result<Hand, SkillError> {
    let object = track.of_kind(DetectionKind::Object).next().map(Detection::pixel);
    let last_both = track
        .frames()
        .rev()
        .find(|&f| track.get(f, DetectionKind::LeftHand).is_some() && track.get(f, DetectionKind::RightHand).is_some());
    let (left, right) = match last_both {
        Some(f) => (
            track.get(f, DetectionKind::LeftHand).map(Detection::pixel),
            track.get(f, DetectionKind::RightHand).map(Detection::pixel),
        ),
        None => (
            track.of_kind(DetectionKind::LeftHand).last().map(Detection::pixel),
            track.of_kind(DetectionKind::RightHand).last().map(Detection::pixel),
        ),
    };
    hand_laterality(object, left, right)
}

/// 3D object position from its first detection in the segment.
pub fn object_position_from_track(track: &DetectionTrack, k: &CameraIntrinsics) -> Result<Vec3, SkillError> {
    let d = track.of_kind(DetectionKind::Object).next().ok_or(SkillError::DetectionUnavailable("object"))?;
    backproject(d.x, d.y, d.z, k)
}

/// Probability per grasp type, keyed by grasp name.
pub type GraspDistribution = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct GraspEstimate {
    pub label: String,
    pub posterior: GraspDistribution,
}

/// Combines image-classifier scores with the object's grasp prior
/// (uniform when the object is unknown). Ties go to the first name in
/// lexical order.
pub fn fuse_grasp_type(scores: &GraspDistribution, prior: Option<&GraspDistribution>) -> Result<GraspEstimate, SkillError> {
    let normalized = |d: &GraspDistribution| libm::fabs(d.values().sum::<f64>() - 1.0) <= 1e-6 && d.values().all(|&p| p >= 0.0);
    if scores.is_empty() || !normalized(scores) {
        return Err(SkillError::NotNormalized);
    }
    let posterior_raw: Vec<(&String, f64)> = match prior {
        None => scores.iter().map(|(k, &v)| (k, v)).collect(),
        Some(prior) => {
            if !scores.keys().eq(prior.keys()) {
                return Err(SkillError::GraspVocabularyMismatch);
            }
            if !normalized(prior) {
                return Err(SkillError::NotNormalized);
            }
            scores.iter().zip(prior.values()).map(|((k, &s), &p)| (k, s * p)).collect()
        }
    };
    let total: f64 = posterior_raw.iter().map(|(_, v)| v).sum();
    if total <= 0.0 {
        return Err(SkillError::InconsistentPrior);
    }
    let mut best: Option<(&String, f64)> = None;
    for &(k, v) in &posterior_raw {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    let posterior = posterior_raw.iter().map(|(k, v)| ((*k).clone(), v / total)).collect();
    Ok(GraspEstimate { label: best.expect("non-empty").0.clone(), posterior })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeFitConfig {
    /// Largest acceptable RMS distance from the points to the fitted circle, meters.
    pub max_rms: f64,
    /// A fitted axis pointing along this direction counts as an opening motion.
    pub reference_axis: Vec3,
}

impl Default for HingeFitConfig {
    fn default() -> Self {
        // Image y points down, so camera -y is "up" for an upright sensor.
        HingeFitConfig { max_rms: 0.05, reference_axis: Vec3::new(0.0, -1.0, 0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeFit {
    pub params: HingeParams,
    pub rms: f64,
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| libm::fabs(a[i][col]).total_cmp(&libm::fabs(a[j][col])))?;
        if libm::fabs(a[pivot][col]) <= 1e-14 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = libm::fmod(a, 2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Fits a hinge rotation to hand positions in temporal order.
///
/// The plane comes from the smallest principal direction of the point
/// scatter; the circle is a Kåsa algebraic fit within that plane. Angles are
/// measured from the first point, so `start_angle` is 0 and `end_angle` is
/// the unwrapped sweep. The axis is oriented to make that sweep positive.
pub fn fit_hinge(points: &[Vec3], config: &HingeFitConfig) -> Result<HingeFit, SkillError> {
    let n = points.len();
    if n < 3 {
        return Err(SkillError::InsufficientPoints);
    }
    let centroid = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p) * (1.0 / n as f64);
    let mut scatter = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - centroid).to_array();
        for i in 0..3 {
            for j in 0..3 {
                scatter[i][j] += d[i] * d[j];
            }
        }
    }
    let (values, vectors) = symmetric_eigen3(scatter);
    let s1 = libm::sqrt(values[0].max(0.0));
    let s2 = libm::sqrt(values[1].max(0.0));
    if s1 == 0.0 || s2 < 1e-9 * s1 {
        return Err(SkillError::DegenerateGeometry);
    }
    let normal = vectors[2];
    let u0 = vectors[0];
    let v0 = normal.cross(u0);

    let planar: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let d = *p - centroid;
            (d.dot(u0), d.dot(v0))
        })
        .collect();

    // Kåsa: a² + b² + D a + E b + F = 0 in the least-squares sense.
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for &(a, b) in &planar {
        let row = [a, b, 1.0];
        let z = a * a + b * b;
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
            rhs[i] -= row[i] * z;
        }
    }
    let [d, e, f] = solve3(m, rhs).ok_or(SkillError::DegenerateGeometry)?;
    let (ca, cb) = (-d / 2.0, -e / 2.0);
    let r2 = ca * ca + cb * cb - f;
    if !(r2 > 0.0) {
        return Err(SkillError::DegenerateGeometry);
    }
    let radius = libm::sqrt(r2);
    let center = centroid + u0 * ca + v0 * cb;

    let mut sweep = 0.0;
    let mut prev: Option<f64> = None;
    for &(a, b) in &planar {
        let theta = libm::atan2(b - cb, a - ca);
        if let Some(p) = prev {
            sweep += wrap_angle(theta - p);
        }
        prev = Some(theta);
    }
    let axis = if sweep >= 0.0 { normal } else { -normal };
    let sweep = libm::fabs(sweep);
    if sweep > 2.0 * PI {
        return Err(SkillError::ExcessiveSweep);
    }

    let sq: f64 = points
        .iter()
        .zip(&planar)
        .map(|(p, &(a, b))| {
            let h = (*p - centroid).dot(normal);
            let rho = libm::hypot(a - ca, b - cb);
            (rho - radius) * (rho - radius) + h * h
        })
        .sum();
    let rms = libm::sqrt(sq / n as f64);
    if rms > config.max_rms {
        return Err(SkillError::PoorFit { rms });
    }

    let sense = if axis.dot(config.reference_axis) >= 0.0 { HingeSense::Opening } else { HingeSense::Closing };
    Ok(HingeFit { params: HingeParams { center, axis, radius, start_angle: 0.0, end_angle: sweep, sense }, rms })
}

/// Integer triple behind codebook entry `index`: the nonzero members of
/// {-1, 0, 1}³ in lexicographic order.
pub fn codebook_triple(index: u8) -> Option<[i8; 3]> {
    let mut i = 0u8;
    for x in -1i8..=1 {
        for y in -1i8..=1 {
            for z in -1i8..=1 {
                if (x, y, z) == (0, 0, 0) {
                    continue;
                }
                if i == index {
                    return Some([x, y, z]);
                }
                i += 1;
            }
        }
    }
    None
}

/// Index of the codebook entry for an integer triple.
pub fn codebook_index(triple: [i8; 3]) -> Option<u8> {
    (0..crate::taskmodel::DIRECTION_COUNT).find(|&i| codebook_triple(i) == Some(triple))
}

/// The 26 unit directions, in codebook order.
pub fn direction_codebook() -> [Vec3; 26] {
    core::array::from_fn(|i| {
        let [x, y, z] = codebook_triple(i as u8).expect("26 entries");
        Vec3::new(f64::from(x), f64::from(y), f64::from(z)).normalized(0.0).expect("nonzero")
    })
}

/// Nearest codebook direction by cosine; ties go to the smaller index.
pub fn quantize_direction(v: Vec3) -> Result<u8, SkillError> {
    let unit = v.normalized(1e-9).ok_or(SkillError::UndefinedDirection)?;
    let mut best = (0u8, f64::NEG_INFINITY);
    for (i, entry) in direction_codebook().iter().enumerate() {
        let d = unit.dot(*entry);
        if d > best.1 {
            best = (i as u8, d);
        }
    }
    Ok(best.0)
}

/// Shoulder, elbow and wrist positions of one arm, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmJoints {
    pub shoulder: Vec3,
    pub elbow: Vec3,
    pub wrist: Vec3,
}

impl ArmJoints {
    /// Upper-arm and lower-arm direction codes.
    pub fn encode(&self) -> Result<[u8; 2], SkillError> {
        Ok([quantize_direction(self.elbow - self.shoulder)?, quantize_direction(self.wrist - self.elbow)?])
    }
}

/// Encodes both arms as (left upper, left lower, right upper, right lower).
pub fn encode_arm_pose(left: &ArmJoints, right: &ArmJoints) -> Result<ArmPoseCode, SkillError> {
    let [lu, ll] = left.encode()?;
    let [ru, rl] = right.encode()?;
    Ok(ArmPoseCode::new([lu, ll, ru, rl]).expect("quantize_direction yields codebook indices"))
}

/// Arm joints at `frame`, if all six were detected.
pub fn arm_joints_at(track: &DetectionTrack, frame: usize) -> Option<(ArmJoints, ArmJoints)> {
    let p = |k| track.get(frame, k).map(Detection::point3);
    Some((
        ArmJoints {
            shoulder: p(DetectionKind::LeftShoulder)?,
            elbow: p(DetectionKind::LeftElbow)?,
            wrist: p(DetectionKind::LeftWrist)?,
        },
        ArmJoints {
            shoulder: p(DetectionKind::RightShoulder)?,
            elbow: p(DetectionKind::RightElbow)?,
            wrist: p(DetectionKind::RightWrist)?,
        },
    ))
}

/// Pose codes at the first and last frames of the track that carry a full
/// set of arm joints.
pub fn start_end_poses(track: &DetectionTrack) -> Result<(ArmPoseCode, ArmPoseCode), SkillError> {
    let mut complete = track.frames().filter_map(|f| arm_joints_at(track, f));
    let first = complete.next().ok_or(SkillError::DetectionUnavailable("arm joints"))?;
    let last = complete.last().unwrap_or(first);
    Ok((encode_arm_pose(&first.0, &first.1)?, encode_arm_pose(&last.0, &last.1)?))
}

/// Default detector confidence needed for a hand position to enter a trajectory.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

/// Back-projects the chosen hand in every frame where it was detected with
/// enough confidence and a valid depth. Frames without one are skipped.
pub fn extract_trajectory(
    track: &DetectionTrack,
    k: &CameraIntrinsics,
    hand: Hand,
    min_confidence: f64,
    frame_time: impl Fn(usize) -> f64,
) -> Result<Vec<TrajectoryPoint>, SkillError> {
    let points: Vec<TrajectoryPoint> = track
        .of_kind(DetectionKind::hand(hand))
        .filter(|d| d.confidence >= min_confidence)
        .filter_map(|d| backproject(d.x, d.y, d.z, k).ok().map(|p| TrajectoryPoint { time: frame_time(d.frame), position: p }))
        .collect();
    if points.is_empty() {
        Err(SkillError::TrajectoryUnavailable)
    } else {
        Ok(points)
    }
}
