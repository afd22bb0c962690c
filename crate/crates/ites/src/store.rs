//! Session persistence. Each session is a directory under the store root:
//!
//! ```text
//! <root>/<id>/bundle         absolute path of the bundle directory
//!            /manifest.toml  copy of the bundle manifest at creation
//!            /audit.log      append-only `timestamp<TAB>op<TAB>args` records
//!            /signal.csv     segmentation diagnostics
//!            /taskmodel.txt  the compiled model, once there is one
//! ```
//!
//! Loading a session replays its audit log against the referenced bundle.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ites_core::recognition::ClassifierModel;
use ites_core::segmentation::ChainConfig;
use ites_core::session::{audit_text, parse_audit, AuditOp, Session};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::bundle::{Bundle, MANIFEST};
use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::{self, CompileInputs, TranscriberConfig};

pub const BUNDLE_REF: &str = "bundle";
pub const AUDIT_LOG: &str = "audit.log";
pub const SIGNAL: &str = "signal.csv";
pub const TASK_MODEL: &str = "taskmodel.txt";

/// Timestamp source for audit records.
pub type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| OffsetDateTime::now_utc().format(&Rfc3339).expect("RFC 3339 formats"))
}

pub fn fixed_clock(timestamp: impl Into<String>) -> Clock {
    let ts = timestamp.into();
    Arc::new(move || ts.clone())
}

/// A user action on a session.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Merge { first: usize, second: usize },
    Ignore { index: usize },
    ConfirmSegments,
    SetTranscript { index: usize, text: String },
    ConfirmTranscripts,
    ReopenTranscripts,
    Compile,
    Revert,
    Discard,
}

/// A loaded session together with its bundle.
pub struct Workspace {
    pub dir: PathBuf,
    pub bundle: Bundle,
    pub session: Session,
    persisted: usize,
    inputs: Option<CompileInputs>,
}

impl Workspace {
    pub fn id(&self) -> &str {
        self.session.id()
    }

    pub fn signal_csv(&self) -> Result<String> {
        let path = self.dir.join(SIGNAL);
        fs::read_to_string(&path).map_err(Error::io(path))
    }

    pub fn model_path(&self) -> PathBuf {
        self.dir.join(TASK_MODEL)
    }
}

#[derive(Clone)]
pub struct Store {
    root: PathBuf,
    pub recognizer: Arc<ClassifierModel>,
    pub chain: ChainConfig,
    pub transcriber: TranscriberConfig,
    pub clock: Clock,
}

impl Store {
    /// Opens or creates a store rooted at `root`, with the seed classifier.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(Error::io(&root))?;
        Ok(Store {
            root,
            recognizer: Arc::new(pipeline::seed_model()),
            chain: ChainConfig::default(),
            transcriber: TranscriberConfig::default(),
            clock: system_clock(),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Store {
        self.clock = clock;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Session ids in creation order.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(Error::io(&self.root))? {
            let entry = entry.map_err(Error::io(&self.root))?;
            if entry.path().join(AUDIT_LOG).is_file() {
                ids.extend(entry.file_name().to_str().map(str::to_string));
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Validates the bundle, runs segmentation and stores a new session in
    /// phase Segmented.
    pub fn create(&self, bundle_dir: impl AsRef<Path>) -> Result<Workspace> {
        let bundle = Bundle::open(bundle_dir)?;
        let chain = pipeline::segment(&bundle, &self.chain)?;
        let (id, dir) = self.allocate()?;
        let setup = || -> Result<Workspace> {
            write(&dir.join(BUNDLE_REF), format!("{}\n", bundle.dir.display()))?;
            write(&dir.join(MANIFEST), bundle.manifest.to_toml())?;
            write(&dir.join(SIGNAL), formats::diagnostics_csv(&chain))?;
            write(&dir.join(AUDIT_LOG), String::new())?;
            let mut session = Session::new(id.clone(), bundle.info());
            session.segment(&(self.clock)(), chain.stops.indices())?;
            let mut ws = Workspace { dir: dir.clone(), bundle, session, persisted: 0, inputs: None };
            persist(&mut ws)?;
            Ok(ws)
        };
        setup().inspect_err(|_| {
            let _ = fs::remove_dir_all(&dir);
        })
    }

    fn allocate(&self) -> Result<(String, PathBuf)> {
        let mut n = self.list()?.len() + 1;
        loop {
            let id = format!("s{n:04}");
            let dir = self.root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(Error::io(dir)(e)),
            }
        }
    }

    pub fn load(&self, id: &str) -> Result<Workspace> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let dir = self.root.join(id);
        if !valid || !dir.join(AUDIT_LOG).is_file() {
            return Err(Error::SessionNotFound(id.to_string()));
        }
        self.load_dir(&dir)
    }

    /// Loads the session stored in `dir`, which need not be under the root.
    pub fn load_dir(&self, dir: &Path) -> Result<Workspace> {
        let log_path = dir.join(AUDIT_LOG);
        if !log_path.is_file() {
            return Err(Error::SessionNotFound(dir.display().to_string()));
        }
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::SessionNotFound(dir.display().to_string()))?
            .to_string();
        let ref_path = dir.join(BUNDLE_REF);
        let bundle_dir = fs::read_to_string(&ref_path).map_err(Error::io(&ref_path))?;
        let bundle = Bundle::open(bundle_dir.trim_end_matches(['\r', '\n']))?;
        let log = fs::read_to_string(&log_path).map_err(Error::io(&log_path))?;
        let records = parse_audit(&log)?;
        let inputs = if records.iter().any(|r| r.op == AuditOp::Compile) {
            Some(CompileInputs::load(&bundle, self.recognizer.clone())?)
        } else {
            None
        };
        let ctx = inputs.as_ref().map(CompileInputs::context);
        let session = Session::replay(id, bundle.info(), &records, ctx.as_ref())?;
        let ws = Workspace { dir: dir.to_path_buf(), bundle, session, persisted: records.len(), inputs };
        Ok(ws)
    }

    /// Applies an action and appends the resulting records to the audit log.
    /// Records are persisted even when the action fails, since a failed
    /// compile still moves the session to Failed.
    pub fn apply(&self, ws: &mut Workspace, action: Action) -> Result<()> {
        let ts = (self.clock)();
        let result = match action {
            Action::Merge { first, second } => ws.session.merge_segments(&ts, first, second).map_err(Error::from),
            Action::Ignore { index } => ws.session.ignore_segment(&ts, index).map_err(Error::from),
            Action::ConfirmSegments => pipeline::backend_for(&ws.bundle, &self.transcriber)
                .and_then(|backend| Ok(ws.session.confirm_segments(&ts, backend.as_ref())?)),
            Action::SetTranscript { index, text } => ws.session.set_transcript(&ts, index, &text).map_err(Error::from),
            Action::ConfirmTranscripts => ws.session.confirm_transcripts(&ts).map_err(Error::from),
            Action::ReopenTranscripts => ws.session.reopen_transcripts(&ts).map_err(Error::from),
            Action::Revert => ws.session.revert(&ts).map_err(Error::from),
            Action::Discard => ws.session.discard(&ts).map_err(Error::from),
            Action::Compile => self.compile(ws, &ts),
        };
        persist(ws)?;
        result
    }

    fn compile(&self, ws: &mut Workspace, ts: &str) -> Result<()> {
        if ws.inputs.is_none() {
            ws.inputs = Some(CompileInputs::load(&ws.bundle, self.recognizer.clone())?);
        }
        let ctx = ws.inputs.as_ref().expect("loaded").context();
        ws.session.compile(ts, &ctx)?;
        Ok(())
    }
}

fn write(path: &Path, contents: String) -> Result<()> {
    fs::write(path, contents).map_err(Error::io(path))
}

fn persist(ws: &mut Workspace) -> Result<()> {
    let new = &ws.session.log()[ws.persisted..];
    if !new.is_empty() {
        let path = ws.dir.join(AUDIT_LOG);
        let mut file = OpenOptions::new().append(true).open(&path).map_err(Error::io(&path))?;
        file.write_all(audit_text(new).as_bytes()).map_err(Error::io(&path))?;
        file.sync_data().map_err(Error::io(&path))?;
        ws.persisted = ws.session.log().len();
    }
    let model_path = ws.model_path();
    match ws.session.model() {
        Some(m) => write(&model_path, m.to_text())?,
        None if model_path.exists() => fs::remove_file(&model_path).map_err(Error::io(&model_path))?,
        None => {}
    }
    Ok(())
}
