//! Process-isolated model execution over a framed stdin/stdout protocol.

mod backend;
mod frame;
mod serve;
mod session;

use std::path::{Path, PathBuf};

pub use backend::{backend_for, registered_backends, InferenceBackend, LoadedModel, ReferenceGraphBackend};
pub use frame::{decode_body, decode_frame, encode_frame, read_frame, write_frame, Frame, FrameHeader, Op, ProtocolError};
pub use serve::{serve, Fault, WorkerOptions, DELAY_ENV, FAULT_ENV};
pub use session::{
    close_session, open_session, ModelSession, SessionConfig, SessionRegistry, SessionState, SharedSession,
    WorkerError,
};

/// File name of the worker executable inside an engine directory, without
/// the platform suffix.
pub const WORKER_BINARY: &str = "zoorun-worker";

pub fn worker_binary_name() -> String {
    format!("{WORKER_BINARY}{}", std::env::consts::EXE_SUFFIX)
}

pub fn worker_binary_path(engine_root: &Path) -> PathBuf {
    engine_root.join(worker_binary_name())
}
