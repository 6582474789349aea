use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::{ChatModel, ChatPrompt, GenerationParams, ProviderError};

/// Append-only JSON-lines log of chat requests and their outcomes.
#[derive(Debug)]
pub struct AuditLog {
    file: Mutex<File>,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    unix_ms: u128,
    model_id: &'a str,
    system: &'a str,
    user: &'a str,
    params: &'a GenerationParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn record(
        &self,
        model_id: &str,
        prompt: &ChatPrompt,
        params: &GenerationParams,
        outcome: &Result<String, ProviderError>,
    ) {
        let entry = AuditEntry {
            unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0),
            model_id,
            system: &prompt.system,
            user: &prompt.user,
            params,
            response: outcome.as_ref().ok().map(String::as_str),
            error: outcome.as_ref().err().map(ToString::to_string),
        };
        let mut line = serde_json::to_string(&entry).expect("audit entry serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("audit log poisoned");
        if let Err(e) = f.write_all(line.as_bytes()) {
            log::error!("failed to write audit log: {e}");
        }
    }
}

/// Logs every `generate` call of the wrapped model.
pub struct Audited<C> {
    inner: C,
    log: std::sync::Arc<AuditLog>,
}

impl<C> Audited<C> {
    pub fn new(inner: C, log: std::sync::Arc<AuditLog>) -> Self {
        Self { inner, log }
    }
}

impl<C: ChatModel> ChatModel for Audited<C> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        let out = self.inner.generate(prompt, params);
        self.log.record(self.inner.model_id(), prompt, params, &out);
        out
    }
}
