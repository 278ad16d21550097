use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Files produced by one command. Unless `commit` is called, everything
/// written so far is removed again when the value is dropped.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

fn staging(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        missing.reverse();
        self.dirs.extend(missing);
        Ok(())
    }

    /// Writes through `fill` into a staging file, then moves it into place.
    pub fn write_with(&mut self, path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if let Some(parent) = path.parent() {
            self.dir(parent)?;
        }
        let tmp = staging(path);
        self.files.push(tmp.clone());
        fill(&tmp).with_context(|| format!("writing {}", path.display()))?;
        fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
        self.files.pop();
        self.files.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        self.write_with(path, |tmp| Ok(fs::write(tmp, bytes)?))
    }

    /// Pretty JSON, read back and parsed before it counts as written.
    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(path, text.as_bytes())?;
        let back = fs::read_to_string(path)?;
        serde_json::from_str::<serde_json::Value>(&back)
            .with_context(|| format!("{} did not read back as JSON", path.display()))?;
        Ok(())
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            if fs::remove_file(f).is_ok() {
                log::debug!("removed partial output {}", f.display());
            }
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_outputs_are_removed() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("a/b");
        let file = dir.join("x.json");
        {
            let mut out = Outputs::new();
            out.write_json(&file, &serde_json::json!({"k": 1})).unwrap();
            assert!(file.exists());
        }
        assert!(!file.exists());
        assert!(!root.path().join("a").exists());
    }

    #[test]
    fn committed_outputs_stay() {
        let root = tempfile::tempdir().unwrap();
        let file = root.path().join("y.txt");
        let mut out = Outputs::new();
        out.write_bytes(&file, b"ok").unwrap();
        assert_eq!(out.commit(), vec![file.clone()]);
        assert!(file.exists());
    }

    #[test]
    fn failing_writer_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let file = root.path().join("z.csv");
        let mut out = Outputs::new();
        let err = out.write_with(&file, |tmp| {
            fs::write(tmp, "half")?;
            anyhow::bail!("boom")
        });
        assert!(err.is_err());
        drop(out);
        assert!(fs::read_dir(root.path()).unwrap().next().is_none());
    }
}
