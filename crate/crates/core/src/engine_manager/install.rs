use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, EngineError, EngineSpec};
use crate::fetch::Fetcher;
use crate::fsutil::{self, AdvisoryLock, HashingWriter, StagingDir};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "zoorun-engine/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstalledEngine {
    pub spec: EngineSpec,
    pub root_dir: PathBuf,
    pub manifest_sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    spec: EngineSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorruptEngine {
    pub dir: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InstalledListing {
    pub engines: Vec<InstalledEngine>,
    pub corrupt: Vec<CorruptEngine>,
}

pub fn engine_lock_path(engines_dir: &Path, spec: &EngineSpec) -> PathBuf {
    fsutil::lock_path(engines_dir, &spec.dir_name())
}

/// Check an engine directory against its manifest.
pub fn verify_engine_dir(dir: &Path) -> Result<InstalledEngine, String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest_path).map_err(|e| format!("cannot read {MANIFEST_FILE}: {e}"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| format!("invalid {MANIFEST_FILE}: {e}"))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(format!("unsupported manifest format '{}'", manifest.format));
    }
    manifest.spec.validate()?;
    let expected = manifest.spec.dir_name();
    let actual = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if actual != expected {
        return Err(format!("directory name does not match manifest ({expected})"));
    }
    for a in &manifest.spec.artifacts {
        let sha = fsutil::sha256_file(&dir.join(&a.filename)).map_err(|e| format!("{}: {e}", a.filename))?;
        if sha != a.sha256 {
            return Err(format!("{}: sha256 {sha} does not match manifest", a.filename));
        }
    }
    Ok(InstalledEngine {
        spec: manifest.spec,
        root_dir: dir.to_path_buf(),
        manifest_sha256: fsutil::sha256_bytes(&bytes),
    })
}

/// Engines under `engines_dir`, sorted by directory name. Hidden entries
/// (staging areas, lock files) are skipped.
pub fn list_installed(engines_dir: &Path) -> InstalledListing {
    let mut listing = InstalledListing::default();
    let Ok(entries) = fs::read_dir(engines_dir) else {
        return listing;
    };
    let mut dirs: Vec<PathBuf> = entries
        .flatten()
        .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .map(|e| e.path())
        .collect();
    dirs.sort();
    for dir in dirs {
        match verify_engine_dir(&dir) {
            Ok(engine) => listing.engines.push(engine),
            Err(reason) => {
                log::warn!("corrupt engine directory {}: {reason}", dir.display());
                listing.corrupt.push(CorruptEngine { dir, reason });
            }
        }
    }
    listing
}

fn fetch_artifact(
    fetcher: &dyn Fetcher,
    url: &str,
    path: &Path,
) -> Result<String, EngineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = HashingWriter::new(BufWriter::new(file));
    fetcher.fetch(url, &mut writer)?;
    writer.flush().map_err(io_err(path))?;
    let (buffered, sha, _) = writer.finish();
    let file = buffered.into_inner().map_err(|e| io_err(path)(e.into_error()))?;
    file.sync_all().map_err(io_err(path))?;
    Ok(sha)
}

#[cfg(unix)]
fn make_executable(path: &Path) -> std::io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o755))
}

#[cfg(not(unix))]
fn make_executable(_path: &Path) -> std::io::Result<()> {
    Ok(())
}

/// Download, verify and atomically install an engine build.
pub fn install_engine(
    spec: &EngineSpec,
    engines_dir: &Path,
    fetcher: &dyn Fetcher,
) -> Result<InstalledEngine, EngineError> {
    spec.validate().map_err(EngineError::Registry)?;
    let name = spec.dir_name();
    let final_dir = engines_dir.join(&name);
    if let Ok(existing) = verify_engine_dir(&final_dir) {
        if existing.spec == *spec {
            return Ok(existing);
        }
    }
    fs::create_dir_all(engines_dir).map_err(io_err(engines_dir))?;
    let lock_path = engine_lock_path(engines_dir, spec);
    let _lock = AdvisoryLock::try_acquire(&lock_path)
        .map_err(io_err(&lock_path))?
        .ok_or_else(|| EngineError::AlreadyInstalling(name.clone()))?;

    // Another installer may have finished while we waited for the lock.
    if let Ok(existing) = verify_engine_dir(&final_dir) {
        if existing.spec == *spec {
            return Ok(existing);
        }
    }
    fsutil::clean_stale_staging(engines_dir, &name).map_err(io_err(engines_dir))?;
    let staging = StagingDir::create(engines_dir, &name).map_err(io_err(engines_dir))?;
    for a in &spec.artifacts {
        let path = staging.path().join(&a.filename);
        let sha = fetch_artifact(fetcher, &a.url, &path)?;
        if sha != a.sha256 {
            return Err(EngineError::ChecksumMismatch {
                filename: a.filename.clone(),
                expected: a.sha256.clone(),
                actual: sha,
            });
        }
        if a.filename.starts_with(crate::engine_worker::WORKER_BINARY) {
            make_executable(&path).map_err(io_err(&path))?;
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        spec: spec.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let manifest_path = staging.path().join(MANIFEST_FILE);
    let mut f = File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    f.write_all(&bytes).map_err(io_err(&manifest_path))?;
    f.sync_all().map_err(io_err(&manifest_path))?;

    if final_dir.exists() {
        log::warn!("replacing invalid engine directory {}", final_dir.display());
        fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    }
    staging.commit(&final_dir).map_err(io_err(&final_dir))?;
    Ok(InstalledEngine {
        spec: spec.clone(),
        root_dir: final_dir,
        manifest_sha256: fsutil::sha256_bytes(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine_manager::{Artifact, Framework};
    use crate::fetch::{file_url, FetchError, SchemeFetcher};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: SchemeFetcher,
        calls: AtomicUsize,
    }

    impl Fetcher for Counting {
        fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.fetch(url, sink)
        }
    }

    fn fixture(dir: &Path, content: &[u8]) -> EngineSpec {
        let src = dir.join("engine.bin");
        fs::write(&src, content).unwrap();
        EngineSpec {
            framework: Framework::Reference,
            version: "1.0.0".parse().unwrap(),
            os: "linux".into(),
            arch: "x86_64".into(),
            cpu: true,
            gpu: false,
            artifacts: vec![Artifact {
                url: file_url(&src),
                sha256: fsutil::sha256_bytes(b"engine payload"),
                filename: "engine.bin".into(),
            }],
        }
    }

    #[test]
    fn install_list_and_reinstall() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let spec = fixture(src.path(), b"engine payload");
        assert_eq!(list_installed(root.path()), InstalledListing::default());
        let fetcher = Counting {
            inner: SchemeFetcher::default(),
            calls: AtomicUsize::new(0),
        };
        let installed = install_engine(&spec, root.path(), &fetcher).unwrap();
        assert_eq!(installed.root_dir, root.path().join("reference-1.0.0-linux-x86_64-cpu"));
        let manifest = fs::read(installed.root_dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(installed.manifest_sha256, fsutil::sha256_bytes(&manifest));
        let listing = list_installed(root.path());
        assert_eq!(listing.engines, vec![installed.clone()]);
        assert!(listing.corrupt.is_empty());

        let again = install_engine(&spec, root.path(), &fetcher).unwrap();
        assert_eq!(again, installed);
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn corrupted_artifact_is_rejected() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let spec = fixture(src.path(), b"engine paylo4d");
        match install_engine(&spec, root.path(), &SchemeFetcher::default()) {
            Err(EngineError::ChecksumMismatch { filename, .. }) => assert_eq!(filename, "engine.bin"),
            other => panic!("{other:?}"),
        }
        assert!(!root.path().join(spec.dir_name()).exists());
        let visible: Vec<_> = fs::read_dir(root.path())
            .unwrap()
            .flatten()
            .filter(|e| e.file_type().unwrap().is_dir())
            .collect();
        assert!(visible.is_empty(), "staging left behind");
    }

    #[test]
    fn tampered_engine_is_reported() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let spec = fixture(src.path(), b"engine payload");
        let installed = install_engine(&spec, root.path(), &SchemeFetcher::default()).unwrap();
        fs::write(installed.root_dir.join("engine.bin"), b"tampered").unwrap();
        let listing = list_installed(root.path());
        assert!(listing.engines.is_empty());
        assert_eq!(listing.corrupt.len(), 1);
        assert!(listing.corrupt[0].reason.contains("engine.bin"));
        // A fresh install repairs it.
        install_engine(&spec, root.path(), &SchemeFetcher::default()).unwrap();
        assert_eq!(list_installed(root.path()).engines.len(), 1);
    }

    #[test]
    fn held_lock_reports_already_installing() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let spec = fixture(src.path(), b"engine payload");
        let _held = AdvisoryLock::try_acquire(&engine_lock_path(root.path(), &spec)).unwrap();
        assert!(matches!(
            install_engine(&spec, root.path(), &SchemeFetcher::default()),
            Err(EngineError::AlreadyInstalling(_))
        ));
    }

    #[test]
    fn stale_staging_is_invisible_and_cleaned() {
        let src = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let spec = fixture(src.path(), b"engine payload");
        let stale = root.path().join(format!(".staging-{}-1-1", spec.dir_name()));
        fs::create_dir_all(&stale).unwrap();
        fs::write(stale.join("engine.bin"), b"engine pay").unwrap();
        assert_eq!(list_installed(root.path()), InstalledListing::default());
        install_engine(&spec, root.path(), &SchemeFetcher::default()).unwrap();
        assert!(!stale.exists());
    }
}
