//! Plain-text config files (`key=value`, `#` comments) and the run log.
//! Command-line flags override file values; the resolved configuration is
//! echoed into the run log together with input-manifest content hashes.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
}

impl ConfigMap {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(ConfigMap::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    ln + 1
                )));
            };
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(ConfigMap { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        // last occurrence wins, mirroring flag override order
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Flag value if given, else config-file value, else the default.
pub fn resolve<T>(cli: Option<T>, file: &ConfigMap, key: &str, default: T) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = cli {
        return Ok(v);
    }
    match file.get(key) {
        Some(s) => s.parse().map_err(|e| CliError::Usage(format!("config key '{key}': {e}"))),
        None => Ok(default),
    }
}

pub fn resolve_flag(cli: bool, file: &ConfigMap, key: &str) -> Result<bool, CliError> {
    if cli {
        return Ok(true);
    }
    match file.get(key) {
        Some("true") => Ok(true),
        Some("false") | None => Ok(false),
        Some(other) => Err(CliError::Usage(format!("config key '{key}': expected true/false, got '{other}'"))),
    }
}

/// Run log accumulating the config echo and input hashes; timing is the
/// only non-deterministic line and is written at flush time.
pub struct RunLog {
    lines: Vec<String>,
    started: std::time::Instant,
}

impl RunLog {
    pub fn new(command: &str) -> Self {
        RunLog { lines: vec![format!("command: {command}")], started: std::time::Instant::now() }
    }

    pub fn config(&mut self, mut kv: Vec<(String, String)>) {
        kv.sort();
        self.lines.push("config:".to_string());
        for (k, v) in kv {
            self.lines.push(format!("  {k}={v}"));
        }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn input_manifest(&mut self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.txt");
        let bytes = fs::read(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let hash = Sha256::digest(&bytes);
        self.lines.push(format!("input_manifest: {} sha256:{:x}", path.display(), hash));
        Ok(())
    }

    pub fn flush(mut self, out_dir: &Path) -> Result<(), CliError> {
        self.lines.push(format!("elapsed_seconds: {:.3}", self.started.elapsed().as_secs_f64()));
        fs::write(out_dir.join("run.log"), self.lines.join("\n") + "\n")?;
        Ok(())
    }
}

pub fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", path.display())))
}

/// Deterministic float formatting for CSV artifacts.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.6}")
    }
}
