//! Offline fixtures and the fail-closed network policy.
//!
//! Every subresource request from a page is resolved here. The document
//! itself and `data:` URLs are served inline, URLs matching a fixture pattern
//! are answered from the local store, and everything else is blocked.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DOCUMENT_URL;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub id: String,
    /// URL glob; `*` matches any run of characters.
    pub url_pattern: String,
    /// File path, relative to the manifest's directory.
    pub path: String,
    #[serde(default = "default_content_type")]
    pub content_type: String,
}

fn default_content_type() -> String {
    "application/octet-stream".into()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    #[serde(default, rename = "fixture")]
    pub fixtures: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    pub id: String,
    pub bytes: Vec<u8>,
    pub sha256: String,
    pub content_type: String,
}

impl Fixture {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>, content_type: impl Into<String>) -> Self {
        let sha256 = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Fixture {
            id: id.into(),
            bytes,
            sha256,
            content_type: content_type.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureStore {
    fixtures: BTreeMap<String, Fixture>,
    patterns: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("reading fixture manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixture manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("fixture {0} referenced twice")]
    Duplicate(String),
}

impl FixtureStore {
    pub fn insert(&mut self, url_pattern: impl Into<String>, fixture: Fixture) {
        self.patterns.push((url_pattern.into(), fixture.id.clone()));
        self.fixtures.insert(fixture.id.clone(), fixture);
    }

    /// Load a TOML manifest of `[[fixture]]` entries; paths are relative to
    /// the manifest file.
    pub fn load(manifest_path: &Path) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(manifest_path)?;
        let manifest: FixtureManifest = toml::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut store = FixtureStore::default();
        for e in manifest.fixtures {
            if store.fixtures.contains_key(&e.id) {
                return Err(FixtureError::Duplicate(e.id));
            }
            let bytes = std::fs::read(base.join(&e.path))?;
            store.insert(e.url_pattern, Fixture::new(e.id, bytes, e.content_type));
        }
        Ok(store)
    }

    pub fn resolve(&self, url: &str) -> Option<&Fixture> {
        self.patterns
            .iter()
            .find(|(p, _)| glob_match(p, url))
            .and_then(|(_, id)| self.fixtures.get(id))
    }

    pub fn get(&self, id: &str) -> Option<&Fixture> {
        self.fixtures.get(id)
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

/// `*`-only glob match.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first)
        || !text[first.len()..].ends_with(last)
        || text.len() < first.len() + last.len()
    {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

/// Scheme + host + port of a URL, or the whole string if it has no scheme.
pub fn origin_of(url: &str) -> String {
    match url.find("://") {
        Some(i) => {
            let after = &url[i + 3..];
            let end = after.find(['/', '?', '#']).unwrap_or(after.len());
            url[..i + 3 + end].to_string()
        }
        None => url.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkDecision {
    /// Serve the document under test.
    Document,
    /// Inline data; no bytes leave the sandbox.
    Inline,
    Fixture(Fixture),
    /// Failed closed; carries the blocked origin.
    Block(String),
}

#[derive(Debug, Clone, Default)]
pub struct NetworkPolicy {
    pub fixtures: Arc<FixtureStore>,
}

impl NetworkPolicy {
    pub fn new(fixtures: FixtureStore) -> Self {
        NetworkPolicy {
            fixtures: Arc::new(fixtures),
        }
    }

    pub fn decide(&self, url: &str) -> NetworkDecision {
        if url == DOCUMENT_URL {
            return NetworkDecision::Document;
        }
        if url.starts_with("data:") || url.starts_with("blob:") || url.starts_with("about:") {
            return NetworkDecision::Inline;
        }
        match self.fixtures.resolve(url) {
            Some(f) => NetworkDecision::Fixture(f.clone()),
            None => NetworkDecision::Block(origin_of(url)),
        }
    }
}
