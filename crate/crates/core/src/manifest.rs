//! Run manifests: enough provenance to replay a CLI run and check that it
//! reproduces its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DIR_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Parsed options, including defaults.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Where the manifest of an output lives: `<dir>/run_manifest.json` for a
/// directory, `<file>.manifest.json` otherwise.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(DIR_MANIFEST)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Recorded inputs whose current contents differ from the manifest.
    pub fn changed_inputs(&self) -> Result<Vec<PathBuf>> {
        changed(&self.inputs)
    }

    /// Recorded outputs whose current contents differ from the manifest.
    pub fn changed_outputs(&self) -> Result<Vec<PathBuf>> {
        changed(&self.outputs)
    }
}

fn changed(files: &[FileDigest]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in files {
        let differs = match sha256_file(&f.path) {
            Ok(d) => d != f.sha256,
            Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => true,
            Err(e) => return Err(e),
        };
        if differs {
            out.push(f.path.clone());
        }
    }
    Ok(out)
}
