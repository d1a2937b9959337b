use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// Command failure, split by exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, bad configuration: exit 1.
    Usage(String),
    /// Unreadable or invalid input data, failed computation: exit 2.
    Data(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(e) => e
                .chain()
                .find_map(|c| {
                    if let Some(e) = c.downcast_ref::<localblur_core::Error>() {
                        Some(e.kind())
                    } else if c.is::<std::io::Error>() {
                        Some("io")
                    } else if c.is::<serde_json::Error>() {
                        Some("format")
                    } else {
                        None
                    }
                })
                .unwrap_or("data"),
        }
    }

    /// Single-line JSON error document for stderr.
    pub fn to_json(&self) -> String {
        json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "kind": self.kind(), "message": self.to_string() },
        })
        .to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<localblur_core::Error> for Failure {
    fn from(e: localblur_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

pub struct ReportSink {
    path: Option<PathBuf>,
    timestamp: bool,
}

impl ReportSink {
    pub fn new(path: Option<PathBuf>, timestamp: bool) -> Self {
        Self { path, timestamp }
    }

    pub fn emit(&self, command: &str, result: &impl Serialize) -> CmdResult {
        let mut doc = serde_json::Map::new();
        doc.insert("schema_version".into(), json!(SCHEMA_VERSION));
        doc.insert("tool".into(), json!("localblur"));
        doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        doc.insert("command".into(), json!(command));
        if self.timestamp {
            let secs = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            doc.insert("timestamp_unix".into(), json!(secs));
        }
        let value = serde_json::to_value(result).map_err(|e| Failure::Data(e.into()))?;
        doc.insert("result".into(), value);
        let text = serde_json::to_string_pretty(&Value::Object(doc))
            .map_err(|e| Failure::Data(e.into()))?
            + "\n";
        match &self.path {
            Some(p) => write_text(p, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> CmdResult {
    std::fs::write(path, text)
        .map_err(|e| Failure::Data(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.into()))? + "\n";
    write_text(path, &text)
}
