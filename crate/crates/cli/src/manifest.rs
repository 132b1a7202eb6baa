//! Run manifest: what was run, on which inputs, with which tool version.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scene: String,
    pub out_dir: String,
    /// SHA-256 over the bytes of every input file and the effective options.
    pub input_hash: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, scene: &Path, out_dir: &Path, inputs: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for chunk in inputs {
            h.update((chunk.len() as u64).to_le_bytes());
            h.update(chunk);
        }
        Self {
            command: command.into(),
            scene: scene.display().to_string(),
            out_dir: out_dir.display().to_string(),
            input_hash: hex::encode(h.finalize()),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Depends on the command, the input contents and the tool version only,
    /// so reruns into another directory produce identical files.
    pub fn hash(&self) -> String {
        let text = format!("{}\n{}\n{}", self.command, self.input_hash, self.tool_version);
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Writes outputs into one directory, every file tagged with the manifest hash.
pub struct OutputDir {
    dir: PathBuf,
    pub manifest_hash: String,
}

impl OutputDir {
    pub fn create(manifest: &RunManifest, dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
        let out = Self {
            dir: dir.to_path_buf(),
            manifest_hash: manifest.hash(),
        };
        let doc = serde_json::json!({
            "manifest_hash": out.manifest_hash,
            "manifest": manifest,
        });
        out.write("manifest.json", &pretty(&doc))?;
        Ok(out)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// JSON object with a leading `manifest_hash` field.
    pub fn write_json(&self, name: &str, mut value: serde_json::Value) -> Result<PathBuf, Failure> {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("manifest_hash".into(), self.manifest_hash.clone().into());
        }
        self.write(name, &pretty(&value))
    }

    /// CSV preceded by a `# manifest=<hash>` comment line.
    pub fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        self.write(name, &format!("# manifest={}\n{body}", self.manifest_hash))
    }
}

pub fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}
