use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

/// Lock file placed in an experiment directory while a pipeline writes it.
pub const LOCK_FILE: &str = ".sal.lock";

/// Exclusive hold on an output root, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

fn holder_alive(path: &Path) -> bool {
    let Ok(text) = std::fs::read_to_string(path) else { return true };
    let Ok(pid) = text.trim().parse::<u32>() else { return true };
    if pid == std::process::id() {
        return true;
    }
    if cfg!(target_os = "linux") {
        Path::new("/proc").join(pid.to_string()).exists()
    } else {
        true
    }
}

impl OutputLock {
    /// Take the lock on `root`, creating it if needed. A lock left behind
    /// by a dead process is taken over.
    pub fn acquire(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))?;
        let path = root.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if holder_alive(&path) {
                        break;
                    }
                    log::warn!("removing stale lock {}", path.display());
                    let _ = std::fs::remove_file(&path);
                }
                Err(e) => return Err(CliError::runtime(format!("{}: {e}", path.display()))),
            }
        }
        Err(CliError::runtime(format!(
            "{} is locked by another pipeline ({}); remove it if no pipeline is running",
            root.display(),
            path.display()
        )))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
