//! Worker side of the protocol: one model per process, requests handled in
//! arrival order.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Duration;

use super::backend::{backend_for, LoadedModel};
use super::frame::{read_frame, write_frame, Frame, FrameHeader, Op, ProtocolError};

pub const FAULT_ENV: &str = "ZOORUN_WORKER_FAULT";
pub const DELAY_ENV: &str = "ZOORUN_WORKER_DELAY_MS";

/// Fault injection for tests, read from the environment by the worker
/// binary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Exit with status 101 on receiving RUN.
    ExitOnRun,
    /// Reply to RUN with bytes that do not form a frame.
    GarbageOnRun,
    /// Never reply to RUN.
    HangOnRun,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WorkerOptions {
    pub fault: Fault,
    pub run_delay: Duration,
}

impl WorkerOptions {
    pub fn from_env() -> WorkerOptions {
        let fault = match std::env::var(FAULT_ENV).as_deref() {
            Ok("exit-on-run") => Fault::ExitOnRun,
            Ok("garbage-on-run") => Fault::GarbageOnRun,
            Ok("hang-on-run") => Fault::HangOnRun,
            _ => Fault::None,
        };
        let run_delay = std::env::var(DELAY_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .map(Duration::from_millis)
            .unwrap_or_default();
        WorkerOptions { fault, run_delay }
    }
}

fn ack(request_id: u64, tensors: Vec<crate::tensor::Tensor>) -> Frame {
    Frame::new(FrameHeader::new(Op::Ack, request_id), tensors)
}

fn nack(request_id: u64, message: impl Into<String>) -> Frame {
    let message = message.into();
    log::debug!("request {request_id} failed: {message}");
    Frame::new(FrameHeader::new(Op::Nack, request_id).with("message", message), Vec::new())
}

fn load(header: &FrameHeader) -> Result<Box<dyn LoadedModel>, String> {
    let field = |k: &str| header.meta_str(k).ok_or_else(|| format!("LOAD is missing meta.{k}"));
    let model_dir = field("model_dir")?;
    let format = field("weights_format")?;
    let source = field("weights_source")?;
    let backend =
        backend_for(format).ok_or_else(|| format!("this worker has no backend for weights format '{format}'"))?;
    backend.load(&Path::new(model_dir).join(source))
}

/// Serve requests until CLOSE or end of input.
pub fn serve<R: Read, W: Write>(mut input: R, mut output: W, options: WorkerOptions) -> Result<(), ProtocolError> {
    let mut model: Option<Box<dyn LoadedModel>> = None;
    while let Some(frame) = read_frame(&mut input)? {
        let id = frame.header.request_id;
        let reply = match frame.header.op {
            Op::Ping => ack(id, Vec::new()),
            Op::Close => {
                write_frame(&mut output, &ack(id, Vec::new()))?;
                return Ok(());
            }
            Op::Load if model.is_some() => nack(id, "a model is already loaded"),
            Op::Load => match load(&frame.header) {
                Ok(m) => {
                    model = Some(m);
                    ack(id, Vec::new())
                }
                Err(e) => nack(id, e),
            },
            Op::Run => {
                match options.fault {
                    Fault::ExitOnRun => std::process::exit(101),
                    Fault::GarbageOnRun => {
                        output.write_all(&[8, 0, 0, 0, 4, 0, 0, 0, b'n', b'o', b'p', b'e'])?;
                        output.flush()?;
                        continue;
                    }
                    Fault::HangOnRun => loop {
                        std::thread::sleep(Duration::from_secs(3600));
                    },
                    Fault::None => {}
                }
                if !options.run_delay.is_zero() {
                    std::thread::sleep(options.run_delay);
                }
                match model.as_mut() {
                    None => nack(id, "no model loaded"),
                    Some(m) => match m.run(frame.tensors) {
                        Ok(outputs) => ack(id, outputs),
                        Err(e) => nack(id, e),
                    },
                }
            }
            op @ (Op::Ack | Op::Nack) => nack(id, format!("unexpected {op} from client")),
        };
        write_frame(&mut output, &reply)?;
    }
    Ok(())
}
