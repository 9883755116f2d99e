use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Output directory of one run. Files are written under a staging
/// directory and moved into place only when the run succeeds; on failure
/// the staging directory is deleted and nothing is left behind.
pub struct OutDir {
    target: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl OutDir {
    pub fn create(target: &Path) -> anyhow::Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target
            .file_name()
            .context("output path has no final component")?
            .to_string_lossy();
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            files: Vec::new(),
            committed: false,
        })
    }

    /// Path of a new output file inside the staging directory.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.staging.join(name)
    }

    /// Writes a CSV table of already formatted cells.
    pub fn table(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> anyhow::Result<()> {
        let path = self.file(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "{}", header.join(","))?;
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl serde::Serialize) -> anyhow::Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(self.file(name), &bytes)?;
        Ok(bytes)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Moves every staged file into the target directory.
    pub fn commit(mut self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.target)
            .with_context(|| format!("creating {}", self.target.display()))?;
        for f in &self.files {
            fs::rename(self.staging.join(f), self.target.join(f))
                .with_context(|| format!("moving {f} into {}", self.target.display()))?;
        }
        fs::remove_dir_all(&self.staging)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Content hash in the style of a git blob object, with SHA-256:
/// `sha256("blob <len>\0" ++ bytes)`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Run summary accumulated by an experiment and written to `metadata.json`.
#[derive(Default)]
pub struct Summary(pub Map<String, Value>);

impl Summary {
    pub fn set(&mut self, key: &str, value: impl serde::Serialize) {
        self.0.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable"),
        );
    }
}

pub fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        v.to_string()
    }
}
