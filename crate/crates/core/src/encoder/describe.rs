use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::prompts::{label_to_text, tokenize, TemplateSet};

/// Chat-completion endpoint used to generate descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    /// JSON pointer to the reply text inside the response body.
    #[serde(default = "default_reply_pointer")]
    pub reply_pointer: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_reply_pointer() -> String {
    "/choices/0/message/content".to_string()
}

fn default_timeout_secs() -> u64 {
    60
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            model: model.into(),
            api_key_env: None,
            temperature: 0.0,
            reply_pointer: default_reply_pointer(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DescriptionMode {
    /// Deterministic template text, no network.
    Offline,
    Remote(RemoteConfig),
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    label: String,
    description: String,
}

/// Resolves category labels to descriptions, caching every answer.
///
/// Once a label is resolved its text never changes for the lifetime of the
/// provider; remote fetches are serialized.
#[derive(Debug)]
pub struct DescriptionProvider {
    mode: DescriptionMode,
    templates: TemplateSet,
    cache: Mutex<BTreeMap<String, String>>,
    remote_requests: AtomicUsize,
}

impl DescriptionProvider {
    pub fn new(mode: DescriptionMode, templates: TemplateSet) -> Self {
        DescriptionProvider {
            mode,
            templates,
            cache: Mutex::new(BTreeMap::new()),
            remote_requests: AtomicUsize::new(0),
        }
    }

    pub fn offline(templates: TemplateSet) -> Self {
        DescriptionProvider::new(DescriptionMode::Offline, templates)
    }

    pub fn mode(&self) -> &DescriptionMode {
        &self.mode
    }

    /// Number of HTTP requests issued so far.
    pub fn remote_requests(&self) -> usize {
        self.remote_requests.load(Ordering::SeqCst)
    }

    pub fn cached(&self, label: &str) -> Option<String> {
        self.lock().get(label).cloned()
    }

    pub fn cache_len(&self) -> usize {
        self.lock().len()
    }

    /// Seeds the cache. An existing entry is left untouched; returns whether
    /// the entry was added.
    pub fn prime(&self, label: impl Into<String>, description: impl Into<String>) -> bool {
        let mut cache = self.lock();
        let label = label.into();
        if cache.contains_key(&label) {
            return false;
        }
        cache.insert(label, description.into());
        true
    }

    pub fn get_description(&self, label: &str) -> Result<String> {
        if label.trim().is_empty() {
            return Err(Error::InvalidArgument("empty category label".into()));
        }
        let mut cache = self.lock();
        if let Some(hit) = cache.get(label) {
            return Ok(hit.clone());
        }
        let text = match &self.mode {
            DescriptionMode::Offline => offline_description(label),
            DescriptionMode::Remote(config) => {
                let request = self.templates.render_description_request(label)?;
                self.remote_requests.fetch_add(1, Ordering::SeqCst);
                fetch_remote(config, label, &request)?
            }
        };
        cache.insert(label.to_string(), text.clone());
        Ok(text)
    }

    /// Merges a JSON Lines cache file. Missing files are not an error.
    pub fn load_cache(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(Error::io(path, e)),
        };
        let mut added = 0;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: n + 1,
                message: e.to_string(),
            })?;
            if self.prime(entry.label, entry.description) {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Writes the whole cache, sorted by label.
    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (label, description) in self.lock().iter() {
            serde_json::to_writer(
                &mut out,
                &CacheLine {
                    label: label.clone(),
                    description: description.clone(),
                },
            )?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, String>> {
        // a poisoned cache is still consistent: entries are inserted whole
        self.cache.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Deterministic stand-in for a generated description.
pub(crate) fn offline_description(label: &str) -> String {
    let spaced = label_to_text(label);
    let tokens = tokenize(&spaced).join(" ");
    format!("Category {spaced}: opinions concerning {tokens}.")
}

fn fetch_remote(config: &RemoteConfig, label: &str, request: &str) -> Result<String> {
    let remote_err = |message: String| Error::Remote {
        label: label.to_string(),
        message,
    };
    let body = json!({
        "model": config.model,
        "messages": [{"role": "user", "content": request}],
        "temperature": config.temperature,
    });
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .build()
        .into();
    let mut call = agent.post(&config.url);
    if let Some(var) = &config.api_key_env {
        let token = std::env::var(var)
            .map_err(|_| remote_err(format!("environment variable {var} is not set")))?;
        call = call.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = call.send_json(&body).map_err(|e| match e {
        ureq::Error::StatusCode(code) => remote_err(format!("HTTP status {code}")),
        other => remote_err(other.to_string()),
    })?;
    let reply: Value = response
        .body_mut()
        .read_json()
        .map_err(|e| remote_err(format!("unreadable reply: {e}")))?;
    let text = reply
        .pointer(&config.reply_pointer)
        .and_then(Value::as_str)
        .ok_or_else(|| remote_err(format!("reply has no string at {}", config.reply_pointer)))?
        .trim()
        .to_string();
    if text.is_empty() {
        return Err(remote_err("empty description in reply".into()));
    }
    Ok(text)
}
