//! The work directory: content-addressed artifacts, a manifest naming the
//! current artifact of each kind, and JSON reports.
//!
//! Layout:
//!
//! ```text
//! <workdir>/artifacts.json           kind -> file name under artifacts/
//! <workdir>/artifacts/<kind>-<hash>  content-hashed files and directories
//! <workdir>/reports/<command>.json   latest report of each command
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use medclaim::hashing::hash_bytes;

use crate::error::input;

const MANIFEST: &str = "artifacts.json";

pub struct Workdir {
    root: PathBuf,
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut bytes = Vec::new();
    for p in parts {
        bytes.extend_from_slice(&(p.len() as u64).to_le_bytes());
        bytes.extend_from_slice(p);
    }
    format!("{:016x}", hash_bytes(&bytes))
}

impl Workdir {
    pub fn open(root: impl Into<PathBuf>) -> anyhow::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating workdir {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn manifest(&self) -> anyhow::Result<BTreeMap<String, String>> {
        let path = self.root.join(MANIFEST);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn record(&self, kind: &str, name: &str) -> anyhow::Result<()> {
        let mut m = self.manifest()?;
        m.insert(kind.to_string(), name.to_string());
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        write_file(&self.root.join(MANIFEST), text.as_bytes())
    }

    /// Stores `bytes` as `artifacts/<kind>-<hash>.<ext>` and makes it the
    /// current artifact of `kind`.
    pub fn store_file(&self, kind: &str, ext: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let name = format!("{kind}-{}.{ext}", content_hash(&[bytes]));
        let path = self.root.join("artifacts").join(&name);
        write_file(&path, bytes)?;
        self.record(kind, &name)?;
        Ok(path)
    }

    /// Stores named files in `artifacts/<kind>-<hash>/`.
    pub fn store_dir(&self, kind: &str, files: &[(&str, Vec<u8>)]) -> anyhow::Result<PathBuf> {
        let mut parts: Vec<&[u8]> = Vec::new();
        for (name, bytes) in files {
            parts.push(name.as_bytes());
            parts.push(bytes);
        }
        let name = format!("{kind}-{}", content_hash(&parts));
        let dir = self.root.join("artifacts").join(&name);
        for (file, bytes) in files {
            write_file(&dir.join(file), bytes)?;
        }
        self.record(kind, &name)?;
        Ok(dir)
    }

    /// Path of the current artifact of `kind`.
    pub fn current(&self, kind: &str) -> anyhow::Result<PathBuf> {
        let m = self.manifest()?;
        let name = m.get(kind).ok_or_else(|| {
            input!(
                "no `{kind}` artifact in {}; run the producing command first",
                self.root.display()
            )
        })?;
        let path = self.root.join("artifacts").join(name);
        if !path.exists() {
            return Err(input!("artifact {} listed in the manifest is missing", path.display()));
        }
        Ok(path)
    }

    pub fn has(&self, kind: &str) -> anyhow::Result<bool> {
        Ok(self.manifest()?.contains_key(kind))
    }

    /// Writes `reports/<name>.json` with sorted keys and a trailing newline.
    pub fn write_report(&self, name: &str, report: &serde_json::Value) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        let path = self.root.join("reports").join(format!("{name}.json"));
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }
}
