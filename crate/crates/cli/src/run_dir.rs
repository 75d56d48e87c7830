//! Output directories: fresh-directory policy and the writer lock.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ConfigError;

const LOCK: &str = ".lock";

/// Exclusive writer lock on a directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| {
                format!(
                    "{} is locked by another writer (remove {} if stale)",
                    dir.display(),
                    path.display()
                )
            })?;
        writeln!(f, "{}", std::process::id()).with_context(|| format!("writing {}", path.display()))?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Creates `dir` for a new run and locks it. An existing non-empty
/// directory is refused unless `resume` is set.
pub fn prepare(dir: &Path, resume: bool) -> Result<DirLock> {
    if dir.exists() {
        let used = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if used && !resume {
            return Err(ConfigError(format!(
                "{} already exists; runs are never overwritten (pick a new --out or pass --resume)",
                dir.display()
            ))
            .into());
        }
    } else if resume {
        return Err(ConfigError(format!("cannot resume: {} does not exist", dir.display())).into());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    DirLock::acquire(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Appends one JSON object per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(tmp.path()).unwrap();
        assert!(DirLock::acquire(tmp.path()).is_err());
        drop(a);
        assert!(DirLock::acquire(tmp.path()).is_ok());
    }

    #[test]
    fn used_directory_is_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        drop(prepare(&dir, false).unwrap());
        fs::write(dir.join("x"), "1").unwrap();
        assert!(prepare(&dir, false).is_err());
        assert!(prepare(&dir, true).is_ok());
        assert!(prepare(&tmp.path().join("nope"), true).is_err());
    }
}
