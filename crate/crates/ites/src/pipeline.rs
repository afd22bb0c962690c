//! Glue between bundles and the core algorithms.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ites_core::recognition::{train, ClassifierModel, Corpus, VocabularyMatcher};
use ites_core::segmentation::{run_chain, ChainConfig, ChainOutput};
use ites_core::session::{CompileContext, TranscriptionBackend};
use ites_core::skillparams::{
    CameraIntrinsics, DetectionTrack, GraspDistribution, HingeFitConfig, DEFAULT_MIN_CONFIDENCE,
};

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::formats;
use crate::transcribe::{CommandBackend, NoBackend, ScriptBackend};

pub const TOOL_VERSION: &str = concat!("ites ", env!("CARGO_PKG_VERSION"));

pub const SEED_CORPUS: &str = include_str!("../data/seed_corpus.csv");

pub const DEFAULT_ALPHA: f64 = 1.0;

pub fn seed_corpus() -> Corpus {
    formats::parse_corpus(Path::new("seed_corpus.csv"), SEED_CORPUS).expect("seed corpus parses")
}

/// Classifier trained on the bundled seed corpus.
pub fn seed_model() -> ClassifierModel {
    train(&seed_corpus(), DEFAULT_ALPHA).expect("seed corpus trains")
}

/// Runs the segmentation chain over the bundle's motion signal.
pub fn segment(bundle: &Bundle, config: &ChainConfig) -> Result<ChainOutput> {
    let raw = bundle.motion_signal(config.window)?;
    Ok(run_chain(raw, config)?)
}

/// Owned inputs for [`CompileContext`], loaded from a bundle's side files.
#[derive(Debug, Clone)]
pub struct CompileInputs {
    pub recognizer: Arc<ClassifierModel>,
    pub objects: VocabularyMatcher,
    pub detections: DetectionTrack,
    pub intrinsics: CameraIntrinsics,
    pub grasp_scores: BTreeMap<usize, GraspDistribution>,
    pub grasp_priors: BTreeMap<String, GraspDistribution>,
    pub min_confidence: f64,
    pub hinge: HingeFitConfig,
    pub bundle_id: String,
}

impl CompileInputs {
    pub fn load(bundle: &Bundle, recognizer: Arc<ClassifierModel>) -> Result<CompileInputs> {
        let m = &bundle.manifest;
        let intrinsics = bundle.intrinsics.ok_or_else(|| Error::bundle("intrinsics", "required to compile"))?;
        let mut detections = Vec::new();
        for p in &m.detections {
            detections.extend(formats::read_detections(&bundle.path(p))?);
        }
        let objects = match &m.objects {
            Some(p) => formats::read_objects(&bundle.path(p))?,
            None => Vec::new(),
        };
        let grasp_scores = match &m.grasp_scores {
            Some(p) => formats::read_grasp_scores(&bundle.path(p))?,
            None => BTreeMap::new(),
        };
        let grasp_priors = match &m.grasp_priors {
            Some(p) => formats::read_grasp_priors(&bundle.path(p))?,
            None => BTreeMap::new(),
        };
        Ok(CompileInputs {
            recognizer,
            objects: VocabularyMatcher { vocabulary: objects },
            detections: DetectionTrack::new(detections),
            intrinsics,
            grasp_scores,
            grasp_priors,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            hinge: HingeFitConfig::default(),
            bundle_id: bundle.id.clone(),
        })
    }

    pub fn context(&self) -> CompileContext<'_> {
        CompileContext {
            recognizer: self.recognizer.as_ref(),
            objects: &self.objects,
            detections: &self.detections,
            intrinsics: self.intrinsics,
            grasp_scores: &self.grasp_scores,
            grasp_priors: &self.grasp_priors,
            min_confidence: self.min_confidence,
            hinge: self.hinge,
            bundle_id: &self.bundle_id,
            tool_version: TOOL_VERSION,
        }
    }
}

/// External transcription command, when one is configured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriberConfig {
    pub command: Option<Vec<String>>,
}

/// Picks the backend for a bundle: the external command when configured and
/// the bundle has audio, else the bundle's script, else none.
pub fn backend_for(bundle: &Bundle, config: &TranscriberConfig) -> Result<Box<dyn TranscriptionBackend + Send + Sync>> {
    if let (Some(cmd), Some(audio)) = (&config.command, &bundle.audio) {
        if let Some((program, args)) = cmd.split_first() {
            return Ok(Box::new(CommandBackend { program: program.into(), args: args.to_vec(), audio: audio.clone() }));
        }
    }
    match &bundle.manifest.transcripts {
        Some(p) => Ok(Box::new(ScriptBackend { utterances: formats::read_utterances(&bundle.path(p))? })),
        None => Ok(Box::new(NoBackend)),
    }
}
