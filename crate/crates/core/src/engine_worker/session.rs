//! Parent side: one worker process per open model.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::frame::{encode_frame, read_frame, Frame, FrameHeader, Op, ProtocolError};
use super::worker_binary_path;
use crate::engine_manager::InstalledEngine;
use crate::model_spec::{parse_model_descriptor, WeightsFormat, DESCRIPTOR_FILE};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("cannot start worker: {0}")]
    WorkerSpawn(String),
    #[error("model load failed: {0}")]
    Load(String),
    #[error("{op} timed out after {after:?}")]
    Timeout { op: Op, after: Duration },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("worker crashed: {0}")]
    WorkerCrashed(String),
    #[error("session is closed")]
    SessionClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Loaded,
    Closed,
    Crashed,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub load_timeout: Duration,
    pub run_timeout: Duration,
    pub close_grace: Duration,
    /// Extra environment for the worker process.
    pub extra_env: Vec<(String, String)>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            load_timeout: Duration::from_secs(30),
            run_timeout: Duration::from_secs(300),
            close_grace: Duration::from_secs(2),
            extra_env: Vec::new(),
        }
    }
}

enum Event {
    Frame(Frame),
    Failed(ProtocolError),
    Eof,
}

static NEXT_SESSION_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct ModelSession {
    session_id: u64,
    engine: InstalledEngine,
    model_dir: PathBuf,
    weights_format: WeightsFormat,
    config: SessionConfig,
    state: SessionState,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    events: Receiver<Event>,
    pending: HashMap<u64, Frame>,
    next_request_id: u64,
    exit_status: Option<ExitStatus>,
}

#[cfg(target_os = "linux")]
const LIBRARY_PATH_VAR: &str = "LD_LIBRARY_PATH";
#[cfg(target_os = "macos")]
const LIBRARY_PATH_VAR: &str = "DYLD_LIBRARY_PATH";
#[cfg(not(any(target_os = "linux", target_os = "macos")))]
const LIBRARY_PATH_VAR: &str = "PATH";

fn library_path_with(root: &Path) -> OsString {
    let mut paths = vec![root.to_path_buf()];
    if let Some(old) = std::env::var_os(LIBRARY_PATH_VAR) {
        paths.extend(std::env::split_paths(&old));
    }
    std::env::join_paths(paths).unwrap_or_else(|_| root.as_os_str().to_owned())
}

/// Start a worker for `engine` and load the model's `weights_format`
/// weights into it.
pub fn open_session(
    engine: &InstalledEngine,
    model_dir: &Path,
    weights_format: WeightsFormat,
    config: SessionConfig,
) -> Result<ModelSession, WorkerError> {
    let text = std::fs::read_to_string(model_dir.join(DESCRIPTOR_FILE))
        .map_err(|e| WorkerError::Load(format!("{}: {e}", model_dir.join(DESCRIPTOR_FILE).display())))?;
    let descriptor = parse_model_descriptor(&text).map_err(|e| WorkerError::Load(e.to_string()))?;
    let weights = descriptor
        .weights_for(weights_format)
        .ok_or_else(|| WorkerError::Load(format!("model has no {weights_format} weights")))?;
    if !model_dir.join(&weights.source).is_file() {
        return Err(WorkerError::Load(format!(
            "weights file '{}' is missing from {}",
            weights.source,
            model_dir.display()
        )));
    }
    let model_dir = std::path::absolute(model_dir).unwrap_or_else(|_| model_dir.to_path_buf());

    let binary = worker_binary_path(&engine.root_dir);
    if !binary.is_file() {
        return Err(WorkerError::WorkerSpawn(format!("{} does not exist", binary.display())));
    }
    let mut cmd = Command::new(&binary);
    cmd.arg("--serve")
        .env(LIBRARY_PATH_VAR, library_path_with(&engine.root_dir))
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit());
    for (k, v) in &config.extra_env {
        cmd.env(k, v);
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| WorkerError::WorkerSpawn(format!("{}: {e}", binary.display())))?;
    let stdin = child.stdin.take().map(BufWriter::new);
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, events) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(stdout);
        loop {
            let event = match read_frame(&mut reader) {
                Ok(Some(frame)) => Event::Frame(frame),
                Ok(None) => Event::Eof,
                Err(e) => Event::Failed(e),
            };
            let last = !matches!(event, Event::Frame(_));
            if tx.send(event).is_err() || last {
                break;
            }
        }
    });

    let mut session = ModelSession {
        session_id: NEXT_SESSION_ID.fetch_add(1, Ordering::Relaxed),
        engine: engine.clone(),
        model_dir: model_dir.clone(),
        weights_format,
        config,
        state: SessionState::Loaded,
        child,
        stdin,
        events,
        pending: HashMap::new(),
        next_request_id: 1,
        exit_status: None,
    };
    let header = FrameHeader::new(Op::Load, 0)
        .with("model_dir", model_dir.to_string_lossy().into_owned())
        .with("weights_format", weights_format.as_str())
        .with("weights_source", weights.source.clone())
        .with("engine", engine.spec.dir_name());
    let timeout = session.config.load_timeout;
    match session.request(header, &[], timeout) {
        Ok(_) => Ok(session),
        Err(e) => {
            session.terminate();
            session.state = SessionState::Crashed;
            Err(match e {
                WorkerError::Inference(msg) => WorkerError::Load(msg),
                other => other,
            })
        }
    }
}

impl ModelSession {
    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    pub fn engine(&self) -> &InstalledEngine {
        &self.engine
    }

    pub fn model_dir(&self) -> &Path {
        &self.model_dir
    }

    pub fn weights_format(&self) -> WeightsFormat {
        self.weights_format
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn worker_pid(&self) -> u32 {
        self.child.id()
    }

    /// Exit status of the worker once it has been reaped.
    pub fn exit_status(&self) -> Option<ExitStatus> {
        self.exit_status
    }

    fn check_open(&self) -> Result<(), WorkerError> {
        match self.state {
            SessionState::Loaded => Ok(()),
            SessionState::Closed => Err(WorkerError::SessionClosed),
            SessionState::Crashed => Err(WorkerError::WorkerCrashed("session already crashed".into())),
        }
    }

    /// Send a request without waiting; returns its request id.
    pub fn send(&mut self, op: Op, tensors: &[Tensor]) -> Result<u64, WorkerError> {
        self.check_open()?;
        let id = self.next_request_id;
        self.next_request_id += 1;
        self.send_frame(FrameHeader::new(op, id), tensors)?;
        Ok(id)
    }

    fn send_frame(&mut self, header: FrameHeader, tensors: &[Tensor]) -> Result<(), WorkerError> {
        let bytes = encode_frame(&header, tensors)?;
        let stdin = self.stdin.as_mut().ok_or(WorkerError::SessionClosed)?;
        if let Err(e) = stdin.write_all(&bytes).and_then(|_| stdin.flush()) {
            return Err(self.crashed(format!("write failed: {e}")));
        }
        Ok(())
    }

    /// Wait for the response to `request_id`, buffering responses to other
    /// requests.
    pub fn wait(&mut self, request_id: u64, timeout: Duration) -> Result<Frame, WorkerError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(frame) = self.pending.remove(&request_id) {
                return match frame.header.op {
                    Op::Ack => Ok(frame),
                    Op::Nack => Err(WorkerError::Inference(
                        frame.header.meta_str("message").unwrap_or("unspecified failure").to_string(),
                    )),
                    op => Err(self.broken(ProtocolError::BadHeader(format!("worker sent {op}")))),
                };
            }
            self.check_open()?;
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(Event::Frame(frame)) => {
                    self.pending.insert(frame.header.request_id, frame);
                }
                Ok(Event::Failed(e)) => return Err(self.broken(e)),
                Ok(Event::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.crashed("worker closed its output".into()))
                }
                Err(RecvTimeoutError::Timeout) => {
                    let op = if request_id == 0 { Op::Load } else { Op::Run };
                    self.terminate();
                    self.state = SessionState::Crashed;
                    return Err(WorkerError::Timeout { op, after: timeout });
                }
            }
        }
    }

    fn request(&mut self, header: FrameHeader, tensors: &[Tensor], timeout: Duration) -> Result<Frame, WorkerError> {
        let id = header.request_id;
        self.send_frame(header, tensors)?;
        self.wait(id, timeout)
    }

    /// Run inference; outputs come back in the model's declared order.
    pub fn run(&mut self, inputs: &[Tensor]) -> Result<Vec<Tensor>, WorkerError> {
        let id = self.send(Op::Run, inputs)?;
        let timeout = self.config.run_timeout;
        Ok(self.wait(id, timeout)?.tensors)
    }

    /// Round-trip a PING.
    pub fn ping(&mut self) -> Result<(), WorkerError> {
        let id = self.send(Op::Ping, &[])?;
        let timeout = self.config.load_timeout;
        self.wait(id, timeout).map(|_| ())
    }

    fn broken(&mut self, e: ProtocolError) -> WorkerError {
        self.terminate();
        self.state = SessionState::Crashed;
        WorkerError::Protocol(e)
    }

    fn crashed(&mut self, detail: String) -> WorkerError {
        self.terminate();
        self.state = SessionState::Crashed;
        let status = self.exit_status.map(|s| format!(" ({s})")).unwrap_or_default();
        WorkerError::WorkerCrashed(format!("{detail}{status}"))
    }

    fn terminate(&mut self) {
        self.stdin = None;
        if self.exit_status.is_none() {
            if let Ok(None) = self.child.try_wait() {
                let _ = self.child.kill();
            }
            self.exit_status = self.child.wait().ok();
        }
    }

    /// Ask the worker to exit, then kill it after the grace period.
    /// Idempotent; a crashed session is left as is.
    pub fn close(&mut self) {
        if self.state != SessionState::Loaded {
            return;
        }
        self.state = SessionState::Closed;
        let id = self.next_request_id;
        self.next_request_id += 1;
        if let Ok(bytes) = encode_frame(&FrameHeader::new(Op::Close, id), &[]) {
            if let Some(stdin) = self.stdin.as_mut() {
                let _ = stdin.write_all(&bytes).and_then(|_| stdin.flush());
            }
        }
        self.stdin = None;
        let deadline = Instant::now() + self.config.close_grace;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => {
                    self.exit_status = Some(status);
                    return;
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => break,
            }
        }
        log::warn!("worker {} ignored CLOSE, killing it", self.child.id());
        let _ = self.child.kill();
        self.exit_status = self.child.wait().ok();
    }
}

impl Drop for ModelSession {
    fn drop(&mut self) {
        self.close();
        self.terminate();
    }
}

pub fn close_session(session: &mut ModelSession) {
    session.close();
}

pub type SharedSession = Arc<Mutex<ModelSession>>;

/// Thread-safe table of open sessions.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: Mutex<BTreeMap<u64, SharedSession>>,
}

impl SessionRegistry {
    pub fn new() -> SessionRegistry {
        SessionRegistry::default()
    }

    pub fn insert(&self, session: ModelSession) -> (u64, SharedSession) {
        let id = session.session_id();
        let shared = Arc::new(Mutex::new(session));
        self.sessions.lock().unwrap().insert(id, shared.clone());
        (id, shared)
    }

    pub fn get(&self, id: u64) -> Option<SharedSession> {
        self.sessions.lock().unwrap().get(&id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Close and forget one session.
    pub fn close(&self, id: u64) -> bool {
        let removed = self.sessions.lock().unwrap().remove(&id);
        match removed {
            Some(s) => {
                s.lock().unwrap_or_else(|p| p.into_inner()).close();
                true
            }
            None => false,
        }
    }

    pub fn close_all(&self) {
        let all: Vec<SharedSession> = std::mem::take(&mut *self.sessions.lock().unwrap()).into_values().collect();
        for s in all {
            s.lock().unwrap_or_else(|p| p.into_inner()).close();
        }
    }
}
