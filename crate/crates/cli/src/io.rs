//! File helpers: hashing, JSON and CSV in and out.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&read_bytes(path, "file")?))
}

pub fn read_bytes(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingInput { what: what.to_string(), path: path.to_path_buf() });
    }
    Ok(std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)
}

pub fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    String::from_utf8(read_bytes(path, what)?).map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = read_text(path, what)?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))?)
}

/// Pretty JSON with a trailing newline; field order follows the types, maps are sorted.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &to_json(value))
}

/// Write rows with a header through the csv crate.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).context("csv header")?;
    for r in rows {
        w.write_record(&r).context("csv row")?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Print JSON to stdout or write it to `out`.
pub fn emit_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            print!("{}", to_json(value));
            Ok(())
        }
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}
