use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliResult};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs. It is the
/// only output carrying a timestamp.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub created: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
    pub versions: Versions,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub stcp_cli: &'static str,
    pub stcp_core: &'static str,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_manifest(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    inputs: &[PathBuf],
    config: serde_json::Value,
) -> CliResult<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok(InputDigest { path: p.clone(), sha256: sha256_file(p)? }))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        command: command.to_string(),
        created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        seed,
        inputs,
        config,
        versions: Versions { stcp_cli: env!("CARGO_PKG_VERSION"), stcp_core: stcp::VERSION },
    };
    crate::commands::write_json(&out.join("run_manifest.json"), &manifest)
}
