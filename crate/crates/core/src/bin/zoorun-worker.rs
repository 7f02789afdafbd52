use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;

use zoorun::engine_worker::{serve, WorkerOptions};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args != ["--serve"] {
        eprintln!("usage: zoorun-worker --serve");
        return ExitCode::from(1);
    }
    let stdin = BufReader::new(io::stdin().lock());
    let stdout = BufWriter::new(io::stdout().lock());
    match serve(stdin, stdout, WorkerOptions::from_env()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
