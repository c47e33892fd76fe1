//! JSON-lines run manifest: one record per line, keys sorted, no
//! timestamps, so identical inputs give byte-identical manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use infomesh::Result;

pub struct Manifest {
    root: PathBuf,
    records: Vec<Value>,
}

impl Manifest {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            records: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of an artifact relative to the run directory.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, v: Value) {
        self.records.push(v);
    }

    /// Hashes a file already written under the run directory.
    pub fn artifact(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel))?;
        let digest = Sha256::digest(&bytes);
        self.records.push(json!({
            "kind": "artifact",
            "path": rel,
            "sha256": hex::encode(digest),
            "bytes": bytes.len(),
        }));
        Ok(())
    }

    pub fn records(&self) -> &[Value] {
        &self.records
    }

    pub fn write(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let path = self.root.join("manifest.jsonl");
        let mut f = fs::File::create(&path)?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r).expect("JSON values serialize"))?;
        }
        Ok(path)
    }
}
