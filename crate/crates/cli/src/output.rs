//! CSV tables and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};

/// Fixed six-decimal formatting; infinities print as `inf`/`-inf`.
pub fn fmt6(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.6}")
    }
}

/// In-memory CSV with LF line endings.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    #[cfg(test)]
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))
    }
}

/// `path` with `suffix` appended to the file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// key=value record of how an output was produced.
pub struct Manifest {
    pub command: String,
    pub flags: Vec<(String, String)>,
    pub seed: Option<u64>,
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl Manifest {
    pub fn render(&self, wall_time_s: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in &self.flags {
            let _ = writeln!(out, "flag.{k}={v}");
        }
        if let Some(s) = self.seed {
            let _ = writeln!(out, "seed={s}");
        }
        let _ = writeln!(out, "git_describe={}", git_describe());
        let _ = writeln!(out, "version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "wall_time_s={wall_time_s:.3}");
        out
    }

    /// Writes `<output>.manifest`.
    pub fn write_beside(&self, output: &Path, wall_time_s: f64) -> Result<()> {
        let path = sibling(output, ".manifest");
        fs::write(&path, self.render(wall_time_s)).with_context(|| format!("writing {}", path.display()))
    }
}
