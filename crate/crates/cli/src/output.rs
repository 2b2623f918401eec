//! Staged output writing, manifests and number formatting.
//!
//! Files are written into a hidden staging directory inside the output
//! directory and moved into place only once the whole command succeeded, so a
//! failed run leaves no partial outputs behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `%.6g`-style: six significant digits, trailing zeros dropped, exponent
/// form below 1e-4 or from 1e6 up.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_g6).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// The part of the manifest that must be identical across reruns.
#[derive(Debug, Serialize)]
pub struct Reproducible<C: Serialize> {
    pub command: String,
    pub tool_version: String,
    pub config: C,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notices: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Execution {
    pub workers: usize,
    pub output_dir: String,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub reproducible: Reproducible<C>,
    pub execution: Execution,
}

pub struct Staging {
    out: PathBuf,
    dir: tempfile::TempDir,
    written: Vec<(String, String)>,
    notices: Vec<String>,
    inputs: Vec<FileDigest>,
    started: Instant,
}

impl Staging {
    pub fn new(out: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".lure-staging-")
            .tempdir_in(out)
            .with_context(|| format!("creating staging directory in {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            written: Vec::new(),
            notices: Vec::new(),
            inputs: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn notice(&mut self, message: impl Into<String>) {
        let m = message.into();
        eprintln!("notice: {m}");
        self.notices.push(m);
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.path().join(name);
        let mut f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("writing {}", path.display()))?;
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> anyhow::Result<()> {
        let mut s = String::new();
        for item in items {
            s.push_str(&serde_json::to_string(item)?);
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    /// Writes the manifest, moves everything into the output directory and
    /// deletes `stale` files this run did not produce.
    pub fn commit<C: Serialize>(
        mut self,
        command: &str,
        config: C,
        workers: usize,
        stale: &[&str],
    ) -> anyhow::Result<()> {
        let manifest = Manifest {
            reproducible: Reproducible {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config,
                inputs: std::mem::take(&mut self.inputs),
                outputs: self
                    .written
                    .iter()
                    .map(|(n, h)| FileDigest {
                        path: n.clone(),
                        sha256: h.clone(),
                    })
                    .collect(),
                notices: std::mem::take(&mut self.notices),
            },
            execution: Execution {
                workers,
                output_dir: self.out.display().to_string(),
                wall_clock_secs: self.started.elapsed().as_secs_f64(),
            },
        };
        self.write_json(MANIFEST, &manifest)?;
        for (name, _) in &self.written {
            let to = self.out.join(name);
            fs::rename(self.dir.path().join(name), &to).with_context(|| format!("moving {}", to.display()))?;
        }
        for name in stale {
            if !self.written.iter().any(|(n, _)| n == name) {
                let p = self.out.join(name);
                if p.exists() {
                    fs::remove_file(&p).with_context(|| format!("removing stale {}", p.display()))?;
                }
            }
        }
        Ok(())
    }
}
