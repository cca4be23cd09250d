//! JSONL manifest I/O. Every output manifest starts with a header line
//! `{"schema": "<name>/1", "config_hash": "...", "version": "..."}`;
//! readers skip a leading header if present, so manifests compose.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

/// One malformed or invalid input line, reported as JSON on stderr.
#[derive(Debug, Clone)]
pub struct LineDiagnostic(pub Value);

impl LineDiagnostic {
    pub fn parse_error(path: &Path, line: usize, error: &str) -> Self {
        LineDiagnostic(json!({
            "path": path.display().to_string(),
            "line": line,
            "error": error,
        }))
    }
}

/// Builds the header line for an output manifest.
pub fn header(schema: &str, config_hash: &str, extra: Map<String, Value>) -> Value {
    let mut map = Map::new();
    map.insert("schema".to_string(), json!(format!("{schema}/1")));
    map.insert("config_hash".to_string(), json!(config_hash));
    map.insert("version".to_string(), json!(env!("CARGO_PKG_VERSION")));
    map.extend(extra);
    Value::Object(map)
}

/// Reads a JSONL file into typed records, skipping one leading header
/// line when present. Parse failures are collected per line, not
/// fail-fast, so every bad line is reported in one run.
pub fn read_jsonl<T: DeserializeOwned>(
    path: &Path,
) -> Result<(Vec<T>, Vec<LineDiagnostic>), anyhow::Error> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let number = index + 1;
        let line = line.with_context(|| format!("reading {}:{number}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        if number == 1 && is_header(&line) {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => records.push(record),
            Err(error) => diagnostics.push(LineDiagnostic::parse_error(
                path,
                number,
                &error.to_string(),
            )),
        }
    }
    Ok((records, diagnostics))
}

fn is_header(line: &str) -> bool {
    serde_json::from_str::<Value>(line)
        .map(|v| v.get("schema").is_some())
        .unwrap_or(false)
}

/// Writes a header plus one JSON value per line.
pub fn write_manifest<I>(path: &Path, header: Value, lines: I) -> Result<()>
where
    I: IntoIterator<Item = Value>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{header}")?;
    for line in lines {
        writeln!(writer, "{line}")?;
    }
    writer
        .flush()
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes a single pretty-printed JSON document (reports).
pub fn write_json_doc(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
