//! Model collection index, search and verified, atomic model download.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::fetch::{FetchError, Fetcher};
use crate::fsutil::{self, AdvisoryLock, HashingWriter, StagingDir};
use crate::model_spec::{is_sha256, parse_model_descriptor, ModelDescriptor, SpecError, DESCRIPTOR_FILE};

/// Marker written into each downloaded model with the archive sha256.
pub const SOURCE_MARKER: &str = ".zoorun-source";
const ARCHIVE_FILE: &str = ".archive.zip";

#[derive(Debug, Error)]
pub enum ZooError {
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error("invalid collection index: {0}")]
    Parse(String),
    #[error("checksum mismatch for {id}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        id: String,
        expected: String,
        actual: String,
    },
    #[error("cannot unpack {id}: {message}")]
    Unpack { id: String, message: String },
    #[error("model {0} is being downloaded by another process")]
    AlreadyDownloading(String),
    #[error("no model with id '{0}' in the index")]
    UnknownModel(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ZooError + '_ {
    move |source| ZooError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub download_url: String,
    pub sha256: String,
    #[serde(default)]
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionIndex {
    pub records: Vec<IndexRecord>,
}

impl CollectionIndex {
    /// Parse an index. Relative download URLs resolve against `base`.
    pub fn parse(text: &str, base: Option<&Url>) -> Result<CollectionIndex, ZooError> {
        let mut index: CollectionIndex = serde_json::from_str(text).map_err(|e| ZooError::Parse(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for r in &mut index.records {
            if !fsutil::is_plain_file_name(&r.id) {
                return Err(ZooError::Parse(format!("invalid model id '{}'", r.id)));
            }
            if !seen.insert(r.id.clone()) {
                return Err(ZooError::Parse(format!("duplicate model id '{}'", r.id)));
            }
            if !is_sha256(&r.sha256) {
                return Err(ZooError::Parse(format!("record '{}' has an invalid sha256", r.id)));
            }
            if !r.download_url.contains("://") {
                let base = base.ok_or_else(|| {
                    ZooError::Parse(format!("record '{}' has a relative URL and no base", r.id))
                })?;
                r.download_url = base
                    .join(&r.download_url)
                    .map_err(|e| ZooError::Parse(format!("record '{}': {e}", r.id)))?
                    .to_string();
            }
        }
        Ok(index)
    }

    pub fn get(&self, id: &str) -> Option<&IndexRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

pub fn load_index(source: &str, fetcher: &dyn Fetcher) -> Result<CollectionIndex, ZooError> {
    let bytes = fetcher.fetch_bytes(source)?;
    let text = String::from_utf8(bytes).map_err(|e| ZooError::Parse(e.to_string()))?;
    CollectionIndex::parse(&text, Url::parse(source).ok().as_ref())
}

/// Case-insensitive substring match over name and tags, ordered by id.
pub fn search<'a>(index: &'a CollectionIndex, query: &str) -> Vec<&'a IndexRecord> {
    let q = query.to_lowercase();
    let mut hits: Vec<&IndexRecord> = index
        .records
        .iter()
        .filter(|r| r.name.to_lowercase().contains(&q) || r.tags.iter().any(|t| t.to_lowercase().contains(&q)))
        .collect();
    hits.sort_by(|a, b| a.id.cmp(&b.id));
    hits
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Downloaded {
    pub path: PathBuf,
    /// True when an intact copy was already present.
    pub cached: bool,
}

/// Parse a model directory and check that its weights and test tensors are
/// present and match their checksums.
pub fn verify_model_dir(dir: &Path) -> Result<ModelDescriptor, String> {
    let text = fs::read_to_string(dir.join(DESCRIPTOR_FILE)).map_err(|e| format!("{DESCRIPTOR_FILE}: {e}"))?;
    let descriptor = parse_model_descriptor(&text).map_err(|e: SpecError| e.to_string())?;
    for w in &descriptor.weights {
        let sha = fsutil::sha256_file(&dir.join(&w.source)).map_err(|e| format!("{}: {e}", w.source))?;
        if sha != w.sha256 {
            return Err(format!("{}: sha256 {sha} does not match descriptor", w.source));
        }
    }
    for t in descriptor.test_inputs.iter().chain(&descriptor.test_outputs) {
        let path = dir.join(&t.source);
        if !path.is_file() {
            return Err(format!("test tensor {} is missing", t.source));
        }
        if let Some(expected) = &t.sha256 {
            let sha = fsutil::sha256_file(&path).map_err(|e| format!("{}: {e}", t.source))?;
            if &sha != expected {
                return Err(format!("{}: sha256 {sha} does not match descriptor", t.source));
            }
        }
    }
    Ok(descriptor)
}

fn is_intact(dir: &Path, record: &IndexRecord) -> bool {
    fs::read_to_string(dir.join(SOURCE_MARKER)).is_ok_and(|s| s.trim() == record.sha256)
        && verify_model_dir(dir).is_ok()
}

fn unpack(archive: &Path, dest: &Path, id: &str) -> Result<(), ZooError> {
    let unpack_err = |message: String| ZooError::Unpack {
        id: id.to_string(),
        message,
    };
    let file = File::open(archive).map_err(io_err(archive))?;
    let mut zip = zip::ZipArchive::new(file).map_err(|e| unpack_err(e.to_string()))?;
    for i in 0..zip.len() {
        let mut entry = zip.by_index(i).map_err(|e| unpack_err(e.to_string()))?;
        let rel = entry
            .enclosed_name()
            .ok_or_else(|| unpack_err(format!("unsafe entry name '{}'", entry.name())))?;
        let out = dest.join(&rel);
        if entry.is_dir() {
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            continue;
        }
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut f = File::create(&out).map_err(io_err(&out))?;
        io::copy(&mut entry, &mut f).map_err(|e| unpack_err(format!("{}: {e}", rel.display())))?;
        f.sync_all().map_err(io_err(&out))?;
    }
    Ok(())
}

/// Fetch, verify and unpack a model into `dest_dir/<id>/`.
pub fn download_model(record: &IndexRecord, dest_dir: &Path, fetcher: &dyn Fetcher) -> Result<Downloaded, ZooError> {
    if !fsutil::is_plain_file_name(&record.id) {
        return Err(ZooError::Parse(format!("invalid model id '{}'", record.id)));
    }
    let final_dir = dest_dir.join(&record.id);
    if is_intact(&final_dir, record) {
        return Ok(Downloaded {
            path: final_dir,
            cached: true,
        });
    }
    fs::create_dir_all(dest_dir).map_err(io_err(dest_dir))?;
    let lock_path = fsutil::lock_path(dest_dir, &record.id);
    let _lock = AdvisoryLock::try_acquire(&lock_path)
        .map_err(io_err(&lock_path))?
        .ok_or_else(|| ZooError::AlreadyDownloading(record.id.clone()))?;
    if is_intact(&final_dir, record) {
        return Ok(Downloaded {
            path: final_dir,
            cached: true,
        });
    }
    fsutil::clean_stale_staging(dest_dir, &record.id).map_err(io_err(dest_dir))?;
    let staging = StagingDir::create(dest_dir, &record.id).map_err(io_err(dest_dir))?;

    let archive = staging.path().join(ARCHIVE_FILE);
    let file = File::create(&archive).map_err(io_err(&archive))?;
    let mut writer = HashingWriter::new(BufWriter::new(file));
    fetcher.fetch(&record.download_url, &mut writer)?;
    writer.flush().map_err(io_err(&archive))?;
    let (_, sha, _) = writer.finish();
    if sha != record.sha256 {
        return Err(ZooError::ChecksumMismatch {
            id: record.id.clone(),
            expected: record.sha256.clone(),
            actual: sha,
        });
    }
    unpack(&archive, staging.path(), &record.id)?;
    fs::remove_file(&archive).map_err(io_err(&archive))?;
    if !staging.path().join(DESCRIPTOR_FILE).is_file() {
        return Err(ZooError::Unpack {
            id: record.id.clone(),
            message: format!("archive has no {DESCRIPTOR_FILE}"),
        });
    }
    verify_model_dir(staging.path()).map_err(|message| ZooError::Unpack {
        id: record.id.clone(),
        message,
    })?;
    let marker = staging.path().join(SOURCE_MARKER);
    fs::write(&marker, format!("{}\n", record.sha256)).map_err(io_err(&marker))?;

    if final_dir.exists() {
        log::warn!("replacing invalid model directory {}", final_dir.display());
        fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    }
    staging.commit(&final_dir).map_err(io_err(&final_dir))?;
    Ok(Downloaded {
        path: final_dir,
        cached: false,
    })
}

/// Write a zip archive of the regular files in `dir` (recursively, sorted,
/// fixed timestamps) so identical trees give identical bytes.
pub fn write_model_archive(dir: &Path, out: &Path) -> io::Result<()> {
    fn collect(root: &Path, dir: &Path, acc: &mut Vec<(String, PathBuf)>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                collect(root, &path, acc)?;
            } else {
                let rel = path.strip_prefix(root).expect("inside root");
                let rel: Vec<String> = rel.iter().map(|c| c.to_string_lossy().into_owned()).collect();
                acc.push((rel.join("/"), path));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut zip = zip::ZipWriter::new(File::create(out)?);
    let options = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644);
    for (name, path) in files {
        zip.start_file(name, options).map_err(io::Error::other)?;
        io::copy(&mut File::open(path)?, &mut zip)?;
    }
    zip.finish().map_err(io::Error::other)?;
    Ok(())
}
