//! All-or-nothing output directories.
//!
//! Files are written into a hidden staging directory inside `--out` and
//! moved into place only once the command succeeds. On failure the staging
//! directory is removed, along with `--out` itself if this run created it.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

const STAGING: &str = ".staging";

/// Fails early, before any computation, when `out` cannot be used.
pub fn check_out(out: &Path, force: bool) -> CliResult<()> {
    if !out.exists() {
        return Ok(());
    }
    if !out.is_dir() {
        return Err(CliError::bad_input(format!("{} exists and is not a directory", out.display())));
    }
    let occupied = fs::read_dir(out)
        .map_err(|e| CliError::io(out, e))?
        .any(|entry| entry.map(|e| e.file_name() != STAGING).unwrap_or(true));
    if occupied && !force {
        return Err(CliError::bad_input(format!(
            "{} is not empty; pass --force to replace its contents",
            out.display()
        )));
    }
    Ok(())
}

#[derive(Debug)]
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    created_out: bool,
    committed: bool,
}

impl Staging {
    pub fn begin(out: &Path, force: bool) -> CliResult<Self> {
        check_out(out, force)?;
        let created_out = !out.exists();
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let dir = out.join(STAGING);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            created_out,
            committed: false,
        })
    }

    /// Directory to write into.
    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn join(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    /// Replaces the contents of `--out` with the staged files.
    pub fn commit(mut self) -> CliResult<PathBuf> {
        for entry in fs::read_dir(&self.out).map_err(|e| CliError::io(&self.out, e))? {
            let entry = entry.map_err(|e| CliError::io(&self.out, e))?;
            if entry.file_name() == STAGING {
                continue;
            }
            let p = entry.path();
            let res = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
            res.map_err(|e| CliError::io(&p, e))?;
        }
        for entry in fs::read_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))? {
            let entry = entry.map_err(|e| CliError::io(&self.dir, e))?;
            let target = self.out.join(entry.file_name());
            fs::rename(entry.path(), &target).map_err(|e| CliError::io(&target, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        self.committed = true;
        Ok(self.out.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        let _ = fs::remove_dir_all(&self.dir);
        if self.created_out {
            let _ = fs::remove_dir(&self.out);
        }
    }
}
