//! URL retrieval behind a [`Fetcher`] trait, with one implementation per
//! URL scheme registered in a [`SchemeFetcher`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::time::Duration;

use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("unsupported URL scheme in '{0}'")]
    UnsupportedScheme(String),
    #[error("invalid URL '{url}': {message}")]
    BadUrl { url: String, message: String },
    #[error("failed to fetch '{url}': {message}")]
    Transfer { url: String, message: String },
}

impl FetchError {
    pub fn transfer(url: &str, message: impl ToString) -> FetchError {
        FetchError::Transfer {
            url: url.to_string(),
            message: message.to_string(),
        }
    }
}

/// Streams the resource at a URL into a sink.
pub trait Fetcher: Send + Sync {
    /// Write the resource at `url` into `sink`, returning the byte count.
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError>;

    fn fetch_bytes(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let mut buf = Vec::new();
        self.fetch(url, &mut buf)?;
        Ok(buf)
    }
}

/// `file://` URLs.
#[derive(Debug, Default, Clone, Copy)]
pub struct FileFetcher;

impl Fetcher for FileFetcher {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let parsed = Url::parse(url).map_err(|e| FetchError::BadUrl {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let path = parsed.to_file_path().map_err(|_| FetchError::BadUrl {
            url: url.to_string(),
            message: "not a local file path".into(),
        })?;
        let mut file = File::open(&path).map_err(|e| FetchError::transfer(url, e))?;
        io::copy(&mut file, sink).map_err(|e| FetchError::transfer(url, e))
    }
}

/// `https://` URLs.
#[derive(Debug, Clone)]
pub struct HttpsFetcher {
    agent: ureq::Agent,
}

impl Default for HttpsFetcher {
    fn default() -> Self {
        HttpsFetcher {
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(30))
                .timeout_read(Duration::from_secs(300))
                .build(),
        }
    }
}

impl Fetcher for HttpsFetcher {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let response = self
            .agent
            .get(url)
            .call()
            .map_err(|e| FetchError::transfer(url, e))?;
        io::copy(&mut response.into_reader(), sink).map_err(|e| FetchError::transfer(url, e))
    }
}

/// Dispatches on the URL scheme.
pub struct SchemeFetcher {
    by_scheme: BTreeMap<String, Box<dyn Fetcher>>,
}

impl SchemeFetcher {
    pub fn empty() -> SchemeFetcher {
        SchemeFetcher {
            by_scheme: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, scheme: &str, fetcher: Box<dyn Fetcher>) {
        self.by_scheme.insert(scheme.to_string(), fetcher);
    }

    pub fn schemes(&self) -> impl Iterator<Item = &str> {
        self.by_scheme.keys().map(String::as_str)
    }
}

impl Default for SchemeFetcher {
    fn default() -> Self {
        let mut f = SchemeFetcher::empty();
        f.register("file", Box::new(FileFetcher));
        f.register("https", Box::new(HttpsFetcher::default()));
        f
    }
}

impl Fetcher for SchemeFetcher {
    fn fetch(&self, url: &str, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let scheme = url
            .split_once("://")
            .map(|(s, _)| s.to_ascii_lowercase())
            .ok_or_else(|| FetchError::UnsupportedScheme(url.to_string()))?;
        self.by_scheme
            .get(&scheme)
            .ok_or_else(|| FetchError::UnsupportedScheme(url.to_string()))?
            .fetch(url, sink)
    }
}

/// Locations without a scheme are paths relative to `base`.
pub fn resolve_relative(location: &str, base: &std::path::Path) -> String {
    if location.contains("://") {
        location.to_string()
    } else {
        file_url(&base.join(location))
    }
}

/// `file://` URL for a local path.
pub fn file_url(path: &std::path::Path) -> String {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    Url::from_file_path(&abs)
        .map(String::from)
        .unwrap_or_else(|_| format!("file://{}", abs.display()))
}
