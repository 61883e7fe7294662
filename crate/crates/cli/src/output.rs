//! Artifact directory: CSV tables with digest sidecars, JSON reports, and the run log.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use elastobcm::io::sidecar_path;
use serde::Serialize;
use serde_json::{json, Value};

pub struct Output {
    dir: PathBuf,
    command: &'static str,
    digest: String,
    log: File,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str, digest: String) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join("run.log"))?;
        let mut out = Output { dir: dir.to_path_buf(), command, digest, log };
        out.log(&format!("start config={}", out.digest))?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Timestamps live here and nowhere else.
    pub fn log(&mut self, message: &str) -> Result<()> {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        writeln!(self.log, "{t:.3} {} {message}", self.command)?;
        Ok(())
    }

    pub fn csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        let mut count = 0usize;
        for r in rows {
            w.write_record(&r)?;
            count += 1;
        }
        w.flush()?;
        let side = json!({
            "command": self.command,
            "config_digest": self.digest,
            "columns": header,
            "rows": count,
        });
        fs::write(sidecar_path(&path), serde_json::to_string_pretty(&side)? + "\n")?;
        self.log(&format!("wrote {name} ({count} rows)"))
    }

    /// Pretty JSON with the config digest added at the top level.
    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut v {
            map.insert("config_digest".into(), Value::String(self.digest.clone()));
            map.insert("command".into(), Value::String(self.command.into()));
        }
        fs::write(self.path(name), serde_json::to_string_pretty(&v)? + "\n")?;
        self.log(&format!("wrote {name}"))
    }

    /// Records a file written by other means.
    pub fn note(&mut self, name: &str) -> Result<()> {
        self.log(&format!("wrote {name}"))
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// `prefix_1 .. prefix_d`.
pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn f(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}
