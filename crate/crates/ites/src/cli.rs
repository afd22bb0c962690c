//! Command line. Exit status 0 on success, 1 on domain errors, 2 on usage
//! errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ites_core::recognition::{cross_validate, train, ClassifierModel, Recognizer};
use ites_core::segmentation::ChainConfig;

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::{self, DEFAULT_ALPHA};
use crate::store::{fixed_clock, Action, Store};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "ites", version, about = "Stop-and-go demonstrations to task models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a bundle and print the segment table.
    Segment {
        bundle: PathBuf,
        /// Write `frame_index,raw,deoutliered,filtered,is_stop` here.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Train a classifier from a `label,sentence` corpus.
    Train {
        corpus: PathBuf,
        model_out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Also report stratified k-fold cross-validation.
        #[arg(long, value_name = "FOLDS")]
        cv: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify an instruction sentence.
    Recognize { model: PathBuf, text: String },
    /// Create a session from a bundle and print its directory.
    New {
        bundle: PathBuf,
        #[arg(long, env = "ITES_DATA", default_value = "ites-data")]
        data: PathBuf,
        /// Speech-to-text command: reads a WAV slice on stdin, prints the transcript.
        #[arg(long, env = "ITES_TRANSCRIBER")]
        transcriber: Option<String>,
    },
    /// Compile a session directory and print the task-model path.
    Compile {
        session_dir: PathBuf,
        /// Timestamp recorded for the compile, RFC 3339. Defaults to now.
        #[arg(long)]
        at: Option<String>,
        /// Classifier model file. Defaults to the bundled seed model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "ITES_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "ITES_DATA", default_value = "ites-data")]
        data: PathBuf,
        /// Speech-to-text command: reads a WAV slice on stdin, prints the transcript.
        #[arg(long, env = "ITES_TRANSCRIBER")]
        transcriber: Option<String>,
    },
    /// Write a synthetic bundle: pick_bring_place, throw_away, open_door,
    /// shelf_multibring, stopgo, or corpus.
    Synth {
        scenario: String,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Runs the command line and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: "<stdout>".into(), source: e };
    match command {
        Command::Segment { bundle, diagnostics } => {
            let bundle = Bundle::open(bundle)?;
            let chain = pipeline::segment(&bundle, &ChainConfig::default())?;
            if let Some(path) = diagnostics {
                fs::write(&path, formats::diagnostics_csv(&chain)).map_err(Error::io(&path))?;
            }
            let segments = ites_core::segmentation::slice_segments(chain.stops.indices(), bundle.frames.len());
            writeln!(
                out,
                "bundle {}: {} frames at {} fps, {} stops",
                bundle.id,
                bundle.frames.len(),
                bundle.video_rate,
                chain.stops.len()
            )
            .map_err(io)?;
            writeln!(out, "{:>5} {:>7} {:>7} {:>9}", "index", "start", "end", "seconds").map_err(io)?;
            for (i, s) in segments.iter().enumerate() {
                let secs = (s.end - s.start) as f64 / bundle.video_rate;
                writeln!(out, "{i:>5} {:>7} {:>7} {secs:>9.2}", s.start, s.end).map_err(io)?;
            }
        }
        Command::Train { corpus, model_out, alpha, cv, seed } => {
            let corpus = formats::read_corpus(&corpus)?;
            let model = train(&corpus, alpha)?;
            fs::write(&model_out, model.to_text()).map_err(Error::io(&model_out))?;
            writeln!(out, "trained on {} sentences, {} classes: {}", corpus.len(), corpus.labels().len(), model_out.display())
                .map_err(io)?;
            if let Some(folds) = cv {
                let r = cross_validate(&corpus, folds, alpha, seed)?;
                writeln!(out, "{folds}-fold accuracy {:.4}", r.mean_accuracy).map_err(io)?;
                write!(out, "{}", r.confusion_csv()).map_err(io)?;
            }
        }
        Command::Recognize { model, text } => {
            let model = load_model(&model)?;
            let p = model.predict(&text)?;
            for (label, score) in p.ranked() {
                writeln!(out, "{}\t{score:.6}", label.code()).map_err(io)?;
            }
        }
        Command::New { bundle, data, transcriber } => {
            let store = open_store(data, transcriber)?;
            let ws = store.create(bundle)?;
            writeln!(out, "{}", ws.dir.display()).map_err(io)?;
        }
        Command::Compile { session_dir, at, model } => {
            let root = session_dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let mut store = Store::open(root)?;
            if let Some(ts) = at {
                store = store.with_clock(fixed_clock(ts));
            }
            if let Some(path) = model {
                store.recognizer = Arc::new(load_model(&path)?);
            }
            let mut ws = store.load_dir(&session_dir)?;
            store.apply(&mut ws, Action::Compile)?;
            writeln!(out, "{}", ws.model_path().display()).map_err(io)?;
        }
        Command::Serve { port, data, transcriber } => {
            let store = open_store(data, transcriber)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: "<runtime>".into(), source: e })?;
            rt.block_on(crate::http::serve(store, port)).map_err(|e| Error::Io { path: format!("port {port}").into(), source: e })?;
        }
        Command::Synth { scenario, out_dir, seed } => {
            match scenario.as_str() {
                "stopgo" => {
                    let script = synth::random_script(3, 1.0..2.0, seed);
                    let video = synth::gen_stopgo(&script, &synth::StopGoConfig { seed, ..Default::default() })?;
                    synth::write_stopgo(&video, &out_dir, "stopgo")?;
                }
                "corpus" => {
                    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
                    formats::write_corpus(&out_dir.join("corpus.csv"), &synth::gen_corpus(50, seed))?;
                }
                name => synth::write_scenario(&synth::gen_scenario(name, seed)?, &out_dir)?,
            }
            writeln!(out, "{}", out_dir.display()).map_err(io)?;
        }
    }
    Ok(())
}

fn open_store(data: PathBuf, transcriber: Option<String>) -> Result<Store> {
    let mut store = Store::open(data)?;
    store.transcriber.command = transcriber
        .map(|t| t.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|argv| !argv.is_empty());
    Ok(store)
}

fn load_model(path: &Path) -> Result<ClassifierModel> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(ClassifierModel::from_text(&text)?)
}
