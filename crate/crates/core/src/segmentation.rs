//! Luminance-change segmentation of a stop-and-go demonstration.
//!
//! The chain is: per-frame luminance, a box mean over a square window, the
//! mean absolute difference between adjacent smoothed frames, a Hampel
//! outlier filter, a zero-phase Butterworth low-pass, and finally local-minimum
//! detection. Each local minimum marks a moment where the demonstrator's hand
//! stopped, and the frame range between two stops becomes one segment.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

/// BT.601 luma, rounded to the nearest integer.
pub fn luminance_of(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    libm::round(y).clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentationError {
    PlaneSize { expected: usize, actual: usize },
    WindowTooLarge { window: usize, width: usize, height: usize },
    NotEnoughFrames(usize),
    DimensionMismatch { index: usize },
    NonIncreasingTimestamp { index: usize },
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },
    InvalidRate(f64),
}

impl fmt::Display for SegmentationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentationError::PlaneSize { expected, actual } => {
                write!(f, "luminance plane has {actual} pixels, expected {expected}")
            }
            SegmentationError::WindowTooLarge { window, width, height } => {
                write!(f, "smoothing window {window} does not fit a {width}x{height} frame")
            }
            SegmentationError::NotEnoughFrames(n) => write!(f, "need at least 2 frames, got {n}"),
            SegmentationError::DimensionMismatch { index } => write!(f, "frame {index} has different dimensions"),
            SegmentationError::NonIncreasingTimestamp { index } => {
                write!(f, "frame {index} timestamp does not increase")
            }
            SegmentationError::CutoffAboveNyquist { cutoff, nyquist } => {
                write!(f, "cutoff {cutoff} Hz is not below the Nyquist frequency {nyquist} Hz")
            }
            SegmentationError::InvalidRate(r) => write!(f, "invalid sample rate {r}"),
        }
    }
}

impl core::error::Error for SegmentationError {}

/// One 8-bit luminance image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    luma: Vec<u8>,
    /// Seconds.
    pub timestamp: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<u8>, timestamp: f64) -> Result<Frame, SegmentationError> {
        let expected = width * height;
        if luma.len() != expected || expected == 0 {
            return Err(SegmentationError::PlaneSize { expected, actual: luma.len() });
        }
        Ok(Frame { width, height, luma, timestamp })
    }

    /// Builds a frame from interleaved 8-bit RGB.
    pub fn from_rgb(width: usize, height: usize, rgb: &[u8], timestamp: f64) -> Result<Frame, SegmentationError> {
        if rgb.len() != width * height * 3 {
            return Err(SegmentationError::PlaneSize { expected: width * height * 3, actual: rgb.len() });
        }
        let luma = rgb.chunks_exact(3).map(|p| luminance_of(p[0], p[1], p[2])).collect();
        Frame::new(width, height, luma, timestamp)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luma(&self) -> &[u8] {
        &self.luma
    }
}

/// Offsets covered by a window of `window` samples anchored at `i`:
/// `[i - window/2, i - window/2 + window)`, truncated to `[0, len)`.
fn window_span(i: usize, window: usize, len: usize) -> (usize, usize) {
    let lo = i.saturating_sub(window / 2);
    let hi = (i + window - window / 2).min(len);
    (lo, hi)
}

/// Box mean over a `window`x`window` neighbourhood; windows are truncated at
/// the borders and averaged over the pixels they actually cover.
pub fn spatial_smooth(frame: &Frame, window: usize) -> Result<Vec<f64>, SegmentationError> {
    let (w, h) = (frame.width, frame.height);
    if window == 0 || window > w.min(h) {
        return Err(SegmentationError::WindowTooLarge { window, width: w, height: h });
    }
    // Summed-area table with a zero row and column in front.
    let stride = w + 1;
    let mut sat = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        for x in 0..w {
            row_sum += u64::from(frame.luma[y * w + x]);
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row_sum;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = window_span(y, window, h);
        for x in 0..w {
            let (x0, x1) = window_span(x, window, w);
            let sum = sat[y1 * stride + x1] + sat[y0 * stride + x0] - sat[y0 * stride + x1] - sat[y1 * stride + x0];
            let count = (y1 - y0) * (x1 - x0);
            out.push(sum as f64 / count as f64);
        }
    }
    Ok(out)
}

/// Per-frame-pair luminance change.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSignal {
    pub values: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
}

impl MotionSignal {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<MotionSignal, SegmentationError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SegmentationError::InvalidRate(sample_rate));
        }
        Ok(MotionSignal { values, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn with_values(&self, values: Vec<f64>) -> MotionSignal {
        MotionSignal { values, sample_rate: self.sample_rate }
    }
}

/// Streaming form of [`motion_signal`]: feed frames one at a time so a long
/// recording never has to be held in memory.
#[derive(Debug, Clone)]
pub struct MotionAccumulator {
    window: usize,
    dims: Option<(usize, usize)>,
    previous: Option<Vec<f64>>,
    first_ts: f64,
    last_ts: f64,
    frames: usize,
    values: Vec<f64>,
}

impl MotionAccumulator {
    pub fn new(window: usize) -> Self {
        MotionAccumulator {
            window,
            dims: None,
            previous: None,
            first_ts: 0.0,
            last_ts: 0.0,
            frames: 0,
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, frame: &Frame) -> Result<(), SegmentationError> {
        let index = self.frames;
        match self.dims {
            None => {
                self.dims = Some((frame.width, frame.height));
                self.first_ts = frame.timestamp;
            }
            Some(dims) if dims != (frame.width, frame.height) => {
                return Err(SegmentationError::DimensionMismatch { index });
            }
            Some(_) if !(frame.timestamp > self.last_ts) => {
                return Err(SegmentationError::NonIncreasingTimestamp { index });
            }
            Some(_) => {}
        }
        let smoothed = spatial_smooth(frame, self.window)?;
        if let Some(prev) = &self.previous {
            let total: f64 = smoothed.iter().zip(prev).map(|(a, b)| libm::fabs(a - b)).sum();
            self.values.push(total / smoothed.len() as f64);
        }
        self.previous = Some(smoothed);
        self.last_ts = frame.timestamp;
        self.frames += 1;
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn finish(self) -> Result<MotionSignal, SegmentationError> {
        if self.frames < 2 {
            return Err(SegmentationError::NotEnoughFrames(self.frames));
        }
        let rate = (self.frames - 1) as f64 / (self.last_ts - self.first_ts);
        MotionSignal::new(self.values, rate)
    }
}

/// Mean absolute difference between consecutive smoothed frames.
pub fn motion_signal(frames: &[Frame], window: usize) -> Result<MotionSignal, SegmentationError> {
    let mut acc = MotionAccumulator::new(window);
    for frame in frames {
        acc.push(frame)?;
    }
    acc.finish()
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    buf.sort_by(f64::total_cmp);
    let n = buf.len();
    if n % 2 == 1 {
        buf[n / 2]
    } else {
        0.5 * (buf[n / 2 - 1] + buf[n / 2])
    }
}

/// Hampel filter: a sample farther than `k * 1.4826 * MAD` from the median of
/// its `2 * half_window + 1` neighbourhood is replaced by that median.
pub fn remove_outliers(signal: &MotionSignal, half_window: usize, k: f64) -> MotionSignal {
    let x = &signal.values;
    let mut out = x.clone();
    let mut buf = Vec::with_capacity(2 * half_window + 1);
    for (i, slot) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(half_window);
        let hi = (i + half_window + 1).min(x.len());
        buf.clear();
        buf.extend_from_slice(&x[lo..hi]);
        let median = median_in_place(&mut buf);
        for v in buf.iter_mut() {
            *v = libm::fabs(*v - median);
        }
        let mad = median_in_place(&mut buf);
        if libm::fabs(x[i] - median) > k * 1.4826 * mad {
            *slot = median;
        }
    }
    signal.with_values(out)
}

/// Second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator coefficients after the leading 1.
    pub a: [f64; 2],
}

impl Biquad {
    /// Second-order Butterworth low-pass via the bilinear transform with
    /// frequency prewarping.
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Result<Biquad, SegmentationError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SegmentationError::InvalidRate(sample_rate));
        }
        let nyquist = sample_rate / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(SegmentationError::CutoffAboveNyquist { cutoff, nyquist });
        }
        let k = libm::tan(core::f64::consts::PI * cutoff / sample_rate);
        let sqrt2 = core::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Ok(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        })
    }

    /// Filter state that makes a constant input `x0` pass unchanged.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let [_, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let s2 = b2 - a2;
        [(b1 - a1 + s2) * x0, s2 * x0]
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let [mut s1, mut s2] = self.steady_state(first);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s1;
            s1 = b1 * input - a1 * y + s2;
            s2 = b2 * input - a2 * y;
            *v = y;
        }
    }

    /// Forward-backward filtering with odd-reflection padding of `pad`
    /// samples at each end and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase second-order Butterworth low-pass.
pub fn lowpass(signal: &MotionSignal, cutoff: f64) -> Result<MotionSignal, SegmentationError> {
    let biquad = Biquad::butterworth_lowpass(cutoff, signal.sample_rate)?;
    // Three time constants of the cutoff: long enough for the reflection to
    // settle before the real samples start.
    let pad = libm::ceil(3.0 * signal.sample_rate / cutoff) as usize;
    Ok(signal.with_values(biquad.filtfilt(&signal.values, pad)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopConfig {
    /// Seconds.
    pub min_spacing: f64,
    /// Fraction of the 90th percentile a minimum must stay below.
    pub rel_threshold: f64,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig { min_spacing: 0.5, rel_threshold: 0.25 }
    }
}

/// Hand-stop positions as strictly increasing sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StopTimings(pub Vec<usize>);

impl StopTimings {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Linear-interpolation percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Local minima below `rel_threshold * P90`, thinned so that no two stops
/// are closer than `min_spacing` (the lower one wins).
///
/// A plateau counts as one minimum at its leftmost index, and only when
/// both of its neighbours are strictly higher.
pub fn detect_stops(signal: &MotionSignal, config: &StopConfig) -> StopTimings {
    let v = &signal.values;
    let n = v.len();
    if n < 3 {
        return StopTimings::default();
    }
    let threshold = config.rel_threshold * percentile(v, 0.9);

    let mut candidates = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        if j < n - 1 && v[i - 1] > v[i] && v[j + 1] > v[i] && v[i] < threshold {
            candidates.push(i);
        }
        i = j + 1;
    }

    candidates.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let spacing = config.min_spacing * signal.sample_rate;
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| (c.abs_diff(k) as f64) >= spacing) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    StopTimings(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentStatus {
    Active,
    Ignored,
}

impl SegmentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentStatus::Active => "active",
            SegmentStatus::Ignored => "ignored",
        }
    }
}

/// A half-open frame range of the demonstration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub status: SegmentStatus,
    pub transcript: Option<String>,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Segment {
        Segment { start, end, status: SegmentStatus::Active, transcript: None }
    }

    pub fn frames(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn is_active(&self) -> bool {
        self.status == SegmentStatus::Active
    }
}

/// Cuts `[0, frame_count)` at every stop. Stops at 0 or past the end are
/// dropped so that no segment is empty.
pub fn slice_segments(stops: &[usize], frame_count: usize) -> Vec<Segment> {
    let mut segments = Vec::with_capacity(stops.len() + 1);
    let mut start = 0;
    for &s in stops {
        if s > start && s < frame_count {
            segments.push(Segment::new(start, s));
            start = s;
        }
    }
    if start < frame_count {
        segments.push(Segment::new(start, frame_count));
    }
    segments
}

/// Audio sample corresponding to video frame `frame`.
pub fn frame_to_sample(frame: usize, audio_rate: f64, video_rate: f64) -> usize {
    libm::round(frame as f64 * audio_rate / video_rate) as usize
}

/// Audio sample ranges matching the video segments cut at `stops`.
pub fn slice_audio(sample_count: usize, audio_rate: f64, stops: &[usize], video_rate: f64) -> Vec<Range<usize>> {
    let mut ranges = Vec::with_capacity(stops.len() + 1);
    let mut start = 0;
    for &f in stops {
        let b = frame_to_sample(f, audio_rate, video_rate).min(sample_count);
        if b > start {
            ranges.push(start..b);
            start = b;
        }
    }
    if start < sample_count {
        ranges.push(start..sample_count);
    }
    ranges
}

/// Parameters of the full signal chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub window: usize,
    pub hampel_half_window: usize,
    pub hampel_k: f64,
    /// Hz.
    pub cutoff: f64,
    pub stops: StopConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { window: 50, hampel_half_window: 5, hampel_k: 3.0, cutoff: 0.5, stops: StopConfig::default() }
    }
}

/// Every intermediate of the chain, kept for diagnostics and plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub raw: MotionSignal,
    pub deoutliered: MotionSignal,
    pub filtered: MotionSignal,
    pub stops: StopTimings,
}

/// Outlier removal, low-pass and stop detection on a raw motion signal.
pub fn run_chain(raw: MotionSignal, config: &ChainConfig) -> Result<ChainOutput, SegmentationError> {
    let deoutliered = remove_outliers(&raw, config.hampel_half_window, config.hampel_k);
    let filtered = lowpass(&deoutliered, config.cutoff)?;
    let stops = detect_stops(&filtered, &config.stops);
    Ok(ChainOutput { raw, deoutliered, filtered, stops })
}
