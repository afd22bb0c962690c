//! On-disk formats: netpbm frames, WAV audio and the CSV side files of a
//! demonstration bundle.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use ites_core::recognition::Corpus;
use ites_core::segmentation::{ChainOutput, Frame};
use ites_core::skillparams::{Detection, DetectionKind, GraspDistribution};
use ites_core::TaskLabel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reads a PGM or PPM frame. Color frames are reduced to BT.601 luma.
pub fn read_frame(path: &Path, timestamp: f64) -> Result<Frame> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = match img {
        DynamicImage::ImageLuma8(gray) => Frame::new(w, h, gray.into_raw(), timestamp),
        other => Frame::from_rgb(w, h, other.to_rgb8().as_raw(), timestamp),
    };
    frame.map_err(|e| Error::format(path, 0, e.to_string()))
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, luma: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(luma.len() + 20);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(luma, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    fs::write(path, out).map_err(Error::io(path))
}

/// Sample count and rate of a mono WAV file.
pub fn wav_info(path: &Path) -> Result<(usize, f64)> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Io { path: path.into(), source },
        other => Error::format(path, 0, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(path, 0, "expected 16-bit PCM mono"));
    }
    Ok((reader.duration() as usize, f64::from(spec.sample_rate)))
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_csv(path, &text)
}

fn parse_csv<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(u64, T)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let record: T = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::format(path, line, e.to_string())
        })?;
        rows.push((rows.len() as u64 + 2, record));
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in rows {
        writer.serialize(r).map_err(|e| Error::format(path, 0, e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::format(path, 0, e.to_string()))?;
    fs::write(path, bytes).map_err(Error::io(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    frame: usize,
    kind: String,
    x: f64,
    y: f64,
    z: f64,
    confidence: f64,
}

/// `frame,kind,x,y,z,confidence`. Hands and objects are pixels plus depth
/// in millimeters; arm joints are camera-frame meters.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_csv::<DetectionRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            let kind = DetectionKind::parse(&r.kind)
                .ok_or_else(|| Error::format(path, line, format!("unknown detection kind {:?}", r.kind)))?;
            Ok(Detection { frame: r.frame, kind, x: r.x, y: r.y, z: r.z, confidence: r.confidence })
        })
        .collect()
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_csv(
        path,
        detections.iter().map(|d| DetectionRow {
            frame: d.frame,
            kind: d.kind.as_str().to_string(),
            x: d.x,
            y: d.y,
            z: d.z,
            confidence: d.confidence,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    frame: usize,
    grasp: String,
    probability: f64,
}

/// Grasp-classifier output, `frame,grasp,probability`.
pub fn read_grasp_scores(path: &Path) -> Result<BTreeMap<usize, GraspDistribution>> {
    let mut out: BTreeMap<usize, GraspDistribution> = BTreeMap::new();
    for (_, r) in read_csv::<ScoreRow>(path)? {
        out.entry(r.frame).or_default().insert(r.grasp, r.probability);
    }
    Ok(out)
}

pub fn write_grasp_scores(path: &Path, scores: &BTreeMap<usize, GraspDistribution>) -> Result<()> {
    write_csv(
        path,
        scores.iter().flat_map(|(&frame, d)| {
            d.iter().map(move |(g, &p)| ScoreRow { frame, grasp: g.clone(), probability: p })
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorRow {
    object: String,
    grasp: String,
    probability: f64,
}

/// Grasp prior per object, `object,grasp,probability`.
pub fn read_grasp_priors(path: &Path) -> Result<BTreeMap<String, GraspDistribution>> {
    let mut out: BTreeMap<String, GraspDistribution> = BTreeMap::new();
    for (_, r) in read_csv::<PriorRow>(path)? {
        out.entry(r.object).or_default().insert(r.grasp, r.probability);
    }
    Ok(out)
}

pub fn write_grasp_priors(path: &Path, priors: &BTreeMap<String, GraspDistribution>) -> Result<()> {
    write_csv(
        path,
        priors.iter().flat_map(|(o, d)| {
            d.iter().map(move |(g, &p)| PriorRow { object: o.clone(), grasp: g.clone(), probability: p })
        }),
    )
}

/// One scripted utterance, times in seconds from the start of the video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

pub fn read_utterances(path: &Path) -> Result<Vec<Utterance>> {
    let rows = read_csv::<Utterance>(path)?;
    for (line, u) in &rows {
        if !(u.start.is_finite() && u.end >= u.start) {
            return Err(Error::format(path, *line, "utterance end before start"));
        }
    }
    Ok(rows.into_iter().map(|(_, u)| u).collect())
}

pub fn write_utterances(path: &Path, utterances: &[Utterance]) -> Result<()> {
    write_csv(path, utterances)
}

/// Precomputed motion signal, one value per line. A non-numeric first line
/// is taken as a header.
pub fn read_motion(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => out.push(v),
            Ok(_) => return Err(Error::format(path, i as u64 + 1, "motion values must be finite and non-negative")),
            Err(_) if i == 0 => {}
            Err(_) => return Err(Error::format(path, i as u64 + 1, format!("not a number: {line:?}"))),
        }
    }
    Ok(out)
}

pub fn write_motion(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 12);
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    fs::write(path, out).map_err(Error::io(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRow {
    label: String,
    sentence: String,
}

/// Training corpus, `label,sentence` with a header row.
pub fn parse_corpus(path: &Path, text: &str) -> Result<Corpus> {
    let rows = parse_csv::<CorpusRow>(path, text)?;
    let entries = rows
        .into_iter()
        .map(|(line, r)| {
            let label = TaskLabel::from_code(&r.label)
                .ok_or_else(|| Error::format(path, line, format!("unknown label {:?}", r.label)))?;
            Ok((r.sentence, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(entries))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_corpus(path, &text)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_csv(
        path,
        corpus.entries.iter().map(|(s, l)| CorpusRow { label: l.code().to_string(), sentence: s.clone() }),
    )
}

/// Object vocabulary, one lowercase name per line; blank lines and `#`
/// comments are skipped.
pub fn read_objects(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Signal diagnostics for plotting:
/// `frame_index,raw,deoutliered,filtered,is_stop`.
pub fn diagnostics_csv(chain: &ChainOutput) -> String {
    let mut out = String::from("frame_index,raw,deoutliered,filtered,is_stop\n");
    for i in 0..chain.raw.len() {
        let stop = u8::from(chain.stops.indices().binary_search(&i).is_ok());
        out.push_str(&format!(
            "{i},{},{},{},{stop}\n",
            chain.raw.values[i],
            chain.deoutliered.values[i],
            chain.filtered.values[i]
        ));
    }
    out
}
