//! Command-line front end. `main` in the `zoorun` binary forwards here.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::engine_manager::{
    install_engine, list_installed, resolve_engine, EngineRegistry, Framework, Platform,
};
use crate::engine_worker::{worker_binary_name, SessionConfig};
use crate::fetch::{file_url, Fetcher, SchemeFetcher};
use crate::fixtures::write_fixture_set;
use crate::model_spec::{ModelDescriptor, TensorSpecEntry};
use crate::processing::{KwArg, ProcStep};
use crate::runner::{
    load_descriptor, run_model, test_model, Environment, RunError, Tiling,
};
use crate::tensor::{read_zrt_file, write_zrt_file, Axis};
use crate::zoo_client::{download_model, load_index, search, CollectionIndex, ZooError};

#[derive(Debug, Parser)]
#[command(name = "zoorun", version, about = "Run model-zoo models on isolated, versioned inference engines")]
pub struct Cli {
    /// Engine registry document (path or URL).
    #[arg(long, env = "ZOORUN_REGISTRY", global = true)]
    registry: Option<String>,
    /// Directory holding installed engines.
    #[arg(long, env = "ZOORUN_ENGINES", global = true)]
    engines_dir: Option<PathBuf>,
    /// Directory holding downloaded models.
    #[arg(long, env = "ZOORUN_MODELS", global = true)]
    models_dir: Option<PathBuf>,
    /// Model collection index (path or URL).
    #[arg(long, env = "ZOORUN_INDEX", global = true)]
    index: Option<String>,
    /// Print machine-readable JSON reports.
    #[arg(long, global = true)]
    json: bool,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Manage inference engines.
    #[command(subcommand)]
    Engines(EnginesCmd),
    /// Search, download and inspect models.
    #[command(subcommand)]
    Models(ModelsCmd),
    /// Run a model on ZRT1 tensors.
    Run(RunArgs),
    /// Check a model against its bundled test tensors.
    TestModel {
        /// Model directory or id.
        model: String,
        #[arg(long)]
        no_install: bool,
    },
    /// Write the demo fixture set into a directory.
    #[command(hide = true)]
    Fixtures { dir: PathBuf },
}

#[derive(Debug, Args)]
struct PlatformArgs {
    /// Target operating system tag (default: host).
    #[arg(long)]
    os: Option<String>,
    /// Target architecture tag (default: host).
    #[arg(long)]
    arch: Option<String>,
    /// Request a GPU build.
    #[arg(long)]
    gpu: bool,
}

impl PlatformArgs {
    fn platform(&self) -> Platform {
        let host = Platform::current();
        Platform {
            os: self.os.clone().unwrap_or(host.os),
            arch: self.arch.clone().unwrap_or(host.arch),
            gpu: self.gpu,
        }
    }
}

#[derive(Debug, Subcommand)]
enum EnginesCmd {
    /// List installed engines.
    List,
    /// Resolve and install an engine.
    Install {
        framework: String,
        /// Version or prefix (default: newest).
        version: Option<String>,
        #[command(flatten)]
        platform: PlatformArgs,
    },
    /// Show which engine a request resolves to, without installing.
    Resolve {
        framework: String,
        version: Option<String>,
        #[command(flatten)]
        platform: PlatformArgs,
    },
}

#[derive(Debug, Subcommand)]
enum ModelsCmd {
    /// Search the collection index by name or tag.
    Search {
        #[arg(default_value = "")]
        query: String,
    },
    /// Download a model from the collection.
    Download { id: String },
    /// Describe a model.
    Info {
        /// Model directory or id.
        model: String,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Model directory or id.
    model: String,
    /// Input tensors (ZRT1 files), in descriptor order or named.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Tile extents, e.g. `y=256,x=256` or `256,256` for the spatial axes.
    #[arg(long, conflicts_with = "no_tiling")]
    tile: Option<String>,
    /// Run on the whole input at once.
    #[arg(long)]
    no_tiling: bool,
    /// Directory for output tensors.
    #[arg(long, short, default_value = ".")]
    output: PathBuf,
    /// Fail instead of installing a missing engine.
    #[arg(long)]
    no_install: bool,
}

struct Ctx<'a> {
    cli: &'a Cli,
    out: &'a mut dyn Write,
    fetcher: SchemeFetcher,
}

type CmdResult = Result<(), RunError>;

fn default_dir(kind: &str) -> PathBuf {
    match std::env::var_os("HOME") {
        Some(home) => Path::new(&home).join(".cache").join("zoorun").join(kind),
        None => PathBuf::from(".zoorun").join(kind),
    }
}

/// `path` relative to the working directory when it lies below it.
pub fn display_path(path: &Path) -> String {
    let cwd = std::env::current_dir().ok();
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    match cwd.as_deref().and_then(|c| abs.strip_prefix(c).ok()) {
        Some(rel) if rel.as_os_str().is_empty() => ".".to_string(),
        Some(rel) => rel.display().to_string(),
        None => path.display().to_string(),
    }
}

fn to_url(location: &str) -> String {
    if location.contains("://") {
        location.to_string()
    } else {
        file_url(Path::new(location))
    }
}

fn write_line(out: &mut dyn Write, line: impl AsRef<str>) -> CmdResult {
    writeln!(out, "{}", line.as_ref()).map_err(|e| RunError::io(Path::new("<stdout>"), e))
}

impl Ctx<'_> {
    fn engines_dir(&self) -> PathBuf {
        self.cli.engines_dir.clone().unwrap_or_else(|| default_dir("engines"))
    }

    fn models_dir(&self) -> PathBuf {
        self.cli.models_dir.clone().unwrap_or_else(|| default_dir("models"))
    }

    fn registry(&self) -> Result<EngineRegistry, RunError> {
        let Some(loc) = &self.cli.registry else {
            log::warn!("no engine registry configured (--registry / ZOORUN_REGISTRY)");
            return Ok(EngineRegistry::default());
        };
        if loc.contains("://") {
            let bytes = self.fetcher.fetch_bytes(loc).map_err(crate::engine_manager::EngineError::from)?;
            let text = String::from_utf8_lossy(&bytes);
            let base = url::Url::parse(loc).ok().and_then(|u| u.to_file_path().ok());
            Ok(EngineRegistry::parse(&text, base.as_deref().and_then(Path::parent))?)
        } else {
            Ok(EngineRegistry::load(Path::new(loc))?)
        }
    }

    fn index(&self) -> Result<CollectionIndex, RunError> {
        let loc = self
            .cli
            .index
            .as_ref()
            .ok_or_else(|| RunError::Usage("no model index configured (--index / ZOORUN_INDEX)".into()))?;
        Ok(load_index(&to_url(loc), &self.fetcher)?)
    }

    fn print(&mut self, line: impl AsRef<str>) -> CmdResult {
        write_line(self.out, line)
    }

    fn print_json(&mut self, value: serde_json::Value) -> CmdResult {
        let text = serde_json::to_string_pretty(&value).expect("json serializes");
        self.print(text)
    }

    /// A model directory from a path, the models directory, or (when an
    /// index is configured) a fresh download.
    fn model_dir(&mut self, model: &str) -> Result<PathBuf, RunError> {
        let path = Path::new(model);
        if path.is_dir() {
            return Ok(path.to_path_buf());
        }
        let cached = self.models_dir().join(model);
        if crate::fsutil::is_plain_file_name(model) && cached.is_dir() {
            return Ok(cached);
        }
        if self.cli.index.is_some() {
            let index = self.index()?;
            if let Some(record) = index.get(model) {
                return Ok(download_model(record, &self.models_dir(), &self.fetcher)?.path);
            }
        }
        Err(RunError::Zoo(ZooError::UnknownModel(model.to_string())))
    }

    fn environment(&self, allow_install: bool) -> Result<Environment<'_>, RunError> {
        Ok(Environment {
            registry: self.registry()?,
            engines_dir: self.engines_dir(),
            platform: Platform::current(),
            fetcher: &self.fetcher,
            session: SessionConfig::default(),
            allow_install,
        })
    }
}

fn engines(ctx: &mut Ctx, cmd: &EnginesCmd) -> CmdResult {
    match cmd {
        EnginesCmd::List => {
            let listing = list_installed(&ctx.engines_dir());
            for c in &listing.corrupt {
                log::warn!("corrupt engine {}: {}", display_path(&c.dir), c.reason);
            }
            if ctx.cli.json {
                let engines: Vec<_> = listing
                    .engines
                    .iter()
                    .map(|e| json!({"spec": e.spec, "dir": display_path(&e.root_dir), "manifest_sha256": e.manifest_sha256}))
                    .collect();
                let corrupt: Vec<_> = listing
                    .corrupt
                    .iter()
                    .map(|c| json!({"dir": display_path(&c.dir), "reason": c.reason}))
                    .collect();
                return ctx.print_json(json!({"engines": engines, "corrupt": corrupt}));
            }
            for e in &listing.engines {
                ctx.print(format!("{}\t{}", e.spec, display_path(&e.root_dir)))?;
            }
            Ok(())
        }
        EnginesCmd::Resolve {
            framework,
            version,
            platform,
        } => {
            let framework: Framework = framework.parse()?;
            let spec = resolve_engine(&ctx.registry()?, framework, version.as_deref().unwrap_or(""), &platform.platform())?;
            if ctx.cli.json {
                return ctx.print_json(json!(spec));
            }
            ctx.print(spec.to_string())
        }
        EnginesCmd::Install {
            framework,
            version,
            platform,
        } => {
            let framework: Framework = framework.parse()?;
            let spec = resolve_engine(&ctx.registry()?, framework, version.as_deref().unwrap_or(""), &platform.platform())?;
            let dir = ctx.engines_dir();
            let existed = list_installed(&dir).engines.iter().any(|e| e.spec == spec);
            let installed = install_engine(&spec, &dir, &ctx.fetcher)?;
            let status = if existed { "already installed" } else { "installed" };
            if ctx.cli.json {
                return ctx.print_json(json!({
                    "status": status,
                    "spec": installed.spec,
                    "dir": display_path(&installed.root_dir),
                    "manifest_sha256": installed.manifest_sha256,
                }));
            }
            ctx.print(format!("{status} {}\t{}", installed.spec, display_path(&installed.root_dir)))
        }
    }
}

fn step_text(step: &ProcStep) -> String {
    let mut args: Vec<String> = step
        .kwargs
        .iter()
        .map(|(k, v)| match v {
            KwArg::Number(n) => format!("{k}={n}"),
            KwArg::List(l) => format!("{k}={l:?}"),
            KwArg::Text(s) => format!("{k}={s}"),
        })
        .collect();
    if ProcStep::takes_mode(&step.name) {
        args.push(format!("mode={}", step.mode.as_str()));
    }
    format!("{}({})", step.name, args.join(", "))
}

fn entry_json(e: &TensorSpecEntry) -> serde_json::Value {
    json!({
        "name": e.name,
        "axes": e.axes.to_string(),
        "data_type": e.data_type.as_str(),
        "shape": e.shape.to_string(),
        "halo": e.halo,
        "data_range": e.data_range.map(|(lo, hi)| vec![lo, hi]),
        "processing": e.processing.iter().map(step_text).collect::<Vec<_>>(),
    })
}

fn entry_lines(e: &TensorSpecEntry, proc_label: &str) -> Vec<String> {
    let mut head = format!("  {}: axes {}, {}, shape {}", e.name, e.axes, e.data_type, e.shape);
    if let Some(h) = &e.halo {
        head.push_str(&format!(", halo {h:?}"));
    }
    if let Some((lo, hi)) = e.data_range {
        head.push_str(&format!(", range [{lo}, {hi}]"));
    }
    let mut lines = vec![head];
    for s in &e.processing {
        lines.push(format!("    {proc_label}: {}", step_text(s)));
    }
    lines
}

fn info_report(d: &ModelDescriptor) -> Vec<String> {
    let mut lines = vec![format!("name: {}", d.name), format!("format_version: {}", d.format_version)];
    lines.push("weights:".into());
    for w in &d.weights {
        let hint = w.engine_version_hint.as_deref().map(|h| format!(" (engine {h})")).unwrap_or_default();
        lines.push(format!("  {}{hint}: {}", w.format, w.source));
    }
    lines.push("inputs:".into());
    for e in &d.inputs {
        lines.extend(entry_lines(e, "preprocessing"));
    }
    lines.push("outputs:".into());
    for e in &d.outputs {
        lines.extend(entry_lines(e, "postprocessing"));
    }
    lines.push(format!(
        "test tensors: {} input(s), {} output(s)",
        d.test_inputs.len(),
        d.test_outputs.len()
    ));
    lines
}

fn models(ctx: &mut Ctx, cmd: &ModelsCmd) -> CmdResult {
    match cmd {
        ModelsCmd::Search { query } => {
            let index = ctx.index()?;
            let hits = search(&index, query);
            if ctx.cli.json {
                return ctx.print_json(json!(hits));
            }
            for r in hits {
                ctx.print(format!("{}\t{}\t{}", r.id, r.name, r.tags.join(",")))?;
            }
            Ok(())
        }
        ModelsCmd::Download { id } => {
            let index = ctx.index()?;
            let record = index.get(id).ok_or_else(|| ZooError::UnknownModel(id.clone()))?;
            let done = download_model(record, &ctx.models_dir(), &ctx.fetcher)?;
            let status = if done.cached { "cached" } else { "downloaded" };
            if ctx.cli.json {
                return ctx.print_json(json!({"id": id, "status": status, "dir": display_path(&done.path)}));
            }
            ctx.print(format!("{status} {id}\t{}", display_path(&done.path)))
        }
        ModelsCmd::Info { model } => {
            let dir = ctx.model_dir(model)?;
            let d = load_descriptor(&dir)?;
            if ctx.cli.json {
                let weights: Vec<_> = d
                    .weights
                    .iter()
                    .map(|w| json!({"format": w.format.as_str(), "source": w.source, "sha256": w.sha256, "engine_version": w.engine_version_hint}))
                    .collect();
                return ctx.print_json(json!({
                    "name": d.name,
                    "format_version": d.format_version,
                    "weights": weights,
                    "inputs": d.inputs.iter().map(entry_json).collect::<Vec<_>>(),
                    "outputs": d.outputs.iter().map(entry_json).collect::<Vec<_>>(),
                    "test_inputs": d.test_inputs.len(),
                    "test_outputs": d.test_outputs.len(),
                }));
            }
            for line in info_report(&d) {
                ctx.print(line)?;
            }
            Ok(())
        }
    }
}

/// Parse `y=10,x=10`, or bare sizes assigned to the spatial axes of `axes`
/// in order.
fn parse_tile(spec: &str, spatial: &[Axis]) -> Result<BTreeMap<Axis, usize>, RunError> {
    let usage = |m: String| RunError::Usage(format!("invalid --tile '{spec}': {m}"));
    let mut out = BTreeMap::new();
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let named = parts.iter().any(|p| p.contains('='));
    if !named && parts.len() != spatial.len() {
        return Err(usage(format!("expected {} sizes for the spatial axes", spatial.len())));
    }
    for (i, part) in parts.iter().enumerate() {
        let (axis, size) = if named {
            let (a, s) = part.split_once('=').ok_or_else(|| usage(format!("'{part}' is not axis=size")))?;
            let mut chars = a.trim().chars();
            let axis = match (chars.next().and_then(Axis::from_char), chars.next()) {
                (Some(axis), None) if axis.is_spatial() => axis,
                _ => return Err(usage(format!("'{a}' is not a spatial axis"))),
            };
            (axis, s)
        } else {
            (spatial[i], *part)
        };
        let size: usize = size
            .trim()
            .parse()
            .map_err(|_| usage(format!("'{size}' is not a size")))?;
        if out.insert(axis, size).is_some() {
            return Err(usage(format!("axis '{}' given twice", axis.as_char())));
        }
    }
    Ok(out)
}

fn run(ctx: &mut Ctx, args: &RunArgs) -> CmdResult {
    let dir = ctx.model_dir(&args.model)?;
    let descriptor = load_descriptor(&dir)?;
    let tiling = if args.no_tiling {
        Tiling::Off
    } else if let Some(t) = &args.tile {
        let spatial: Vec<Axis> = descriptor.inputs[0].axes.iter().filter(|a| a.is_spatial()).collect();
        Tiling::Extents(parse_tile(t, &spatial)?)
    } else {
        Tiling::Auto
    };
    let inputs = args
        .inputs
        .iter()
        .map(|p| read_zrt_file(p).map_err(|e| RunError::Data(format!("{}: {e}", display_path(p)))))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = {
        let env = ctx.environment(!args.no_install)?;
        run_model(&env, &dir, inputs, &tiling)?
    };
    fs::create_dir_all(&args.output).map_err(|e| RunError::io(&args.output, e))?;
    let mut written = Vec::new();
    for t in &outputs {
        let path = args.output.join(format!("{}.zrt", t.name()));
        write_zrt_file(t, &path)?;
        written.push(display_path(&path));
    }
    if ctx.cli.json {
        return ctx.print_json(json!({"outputs": written}));
    }
    for w in written {
        ctx.print(w)?;
    }
    Ok(())
}

fn test(ctx: &mut Ctx, model: &str, no_install: bool) -> CmdResult {
    let dir = ctx.model_dir(model)?;
    let report = {
        let env = ctx.environment(!no_install)?;
        test_model(&env, &dir)?
    };
    if ctx.cli.json {
        ctx.print_json(json!({"model": report.model, "passed": report.passed(), "outputs": report.outputs}))?;
    } else {
        for o in &report.outputs {
            let diff = o.max_abs_diff.map_or("shape mismatch".to_string(), |d| format!("max_abs_diff={d}"));
            let verdict = if o.passed { "PASS" } else { "FAIL" };
            ctx.print(format!("{verdict} {} {} {diff}", o.name, o.dtype))?;
        }
        ctx.print(if report.passed() { "PASS" } else { "FAIL" })?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(RunError::Data(format!("model '{}' does not reproduce its test outputs", report.model)))
    }
}

fn fixtures(ctx: &mut Ctx, dir: &Path) -> CmdResult {
    let exe = std::env::current_exe().map_err(|e| RunError::io(Path::new("<self>"), e))?;
    let worker = exe.with_file_name(worker_binary_name());
    if !worker.is_file() {
        return Err(RunError::Usage(format!("worker binary not found next to {}", exe.display())));
    }
    let set = write_fixture_set(dir, &worker)?;
    ctx.print(format!("registry\t{}", display_path(&set.registry_path)))?;
    ctx.print(format!("index\t{}", display_path(&set.index_path)))?;
    ctx.print(format!("models\t{}", display_path(&set.models_dir)))
}

fn dispatch(ctx: &mut Ctx) -> CmdResult {
    let cli = ctx.cli;
    match &cli.command {
        Command::Engines(cmd) => engines(ctx, cmd),
        Command::Models(cmd) => models(ctx, cmd),
        Command::Run(args) => run(ctx, args),
        Command::TestModel { model, no_install } => test(ctx, model, *no_install),
        Command::Fixtures { dir } => fixtures(ctx, dir),
    }
}

/// Parse arguments and run one command. Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    execute(&cli, out, err)
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let mut ctx = Ctx {
        cli,
        out,
        fetcher: SchemeFetcher::default(),
    };
    match dispatch(&mut ctx) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
