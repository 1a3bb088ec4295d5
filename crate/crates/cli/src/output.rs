//! The output directory: exclusive ownership through a lock file, and
//! atomic writes for everything placed in it.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ktlab::eval::write_atomic;

const LOCK_NAME: &str = ".ktlab.lock";

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    /// Creates `root` if needed and takes its lock. Fails if another
    /// process holds it.
    pub fn acquire(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        let lock = root.join(LOCK_NAME);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).with_context(|| {
            format!(
                "output directory {} is locked by another run (remove {} if that run is gone)",
                root.display(),
                lock.display()
            )
        })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
