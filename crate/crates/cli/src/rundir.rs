use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub const LOCK_FILE: &str = ".lock";

/// An output directory held for the lifetime of a command.
///
/// Opening refuses a non-empty directory unless `force` is set, and refuses
/// one whose lock file is present. The lock is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn open(path: &Path, force: bool) -> Result<Self, CliError> {
        let fail = |what: &str, e: std::io::Error| CliError::RunDir(format!("{what} {}: {e}", path.display()));
        fs::create_dir_all(path).map_err(|e| fail("cannot create", e))?;
        let lock = path.join(LOCK_FILE);
        if lock.exists() {
            return Err(CliError::RunDir(format!(
                "{} is locked by another run (remove {} if stale)",
                path.display(),
                lock.display()
            )));
        }
        let occupied = fs::read_dir(path).map_err(|e| fail("cannot list", e))?.next().is_some();
        if occupied && !force {
            return Err(CliError::RunDir(format!(
                "{} is not empty; pass --force to overwrite",
                path.display()
            )));
        }
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| fail("cannot lock", e))?;
        Ok(Self { path: path.to_owned() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let target = self.join(name);
        fs::write(&target, contents)
            .map_err(|e| CliError::RunDir(format!("cannot write {}: {e}", target.display())))?;
        Ok(target)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert_eq!(RunDir::open(dir.path(), false).unwrap_err().class(), "RunDirError");
        let run = RunDir::open(dir.path(), true).unwrap();
        assert!(dir.path().join(LOCK_FILE).exists());
        drop(run);
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn lock_blocks_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        let _held = RunDir::open(&target, false).unwrap();
        assert!(RunDir::open(&target, true).is_err());
    }
}
