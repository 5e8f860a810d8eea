//! CSV and manifest writing. Cells are emitted with the shortest
//! round-trip float formatting, so identical runs produce byte-identical
//! files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{CliError, CliResult};

/// Divergence marker token used in rate columns.
pub const DIV: &str = "div";

pub struct OutputDir {
    dir: PathBuf,
    pub written: Vec<(String, String, u64)>,
}

impl OutputDir {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create output dir: {e}")))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> CliResult<()> {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push_str("\r\n");
        for row in rows {
            debug_assert_eq!(row.len(), header.len(), "row width mismatch in {name}");
            buf.push_str(&row.join(","));
            buf.push_str("\r\n");
        }
        self.write_bytes(name, buf.as_bytes())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Config(format!("cannot write {name}: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.written
            .push((name.to_string(), hex::encode(hasher.finalize()), bytes.len() as u64));
        Ok(())
    }

    pub fn write_manifest(
        &mut self,
        config_echo: &serde_json::Value,
        seed_used: Option<u64>,
        results: serde_json::Value,
    ) -> CliResult<()> {
        let outputs: Vec<serde_json::Value> = self
            .written
            .iter()
            .map(|(name, sha, bytes)| {
                serde_json::json!({ "file": name, "sha256": sha, "bytes": bytes })
            })
            .collect();
        let manifest = serde_json::json!({
            "schema_version": crate::config::SCHEMA_VERSION,
            "library_version": env!("CARGO_PKG_VERSION"),
            "seed_used": seed_used,
            "config": config_echo,
            "outputs": outputs,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.dir.join("run_manifest.json");
        let mut f = fs::File::create(&path)
            .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| CliError::Config(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}

pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_c(v: bystander::linalg::C64) -> (String, String) {
    (fmt_f(v.re), fmt_f(v.im))
}
