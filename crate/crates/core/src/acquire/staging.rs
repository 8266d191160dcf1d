//! Staging directories and the atomic rename that publishes them.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::locate::is_populated_dir;

/// Directory under the store that holds in-progress fetches.
pub const STAGING_DIR: &str = ".staging";

/// Twelve lowercase hex characters of randomness.
pub fn nonce() -> String {
    let bits: u64 = rand::random();
    format!("{:012x}", bits & 0xffff_ffff_ffff)
}

/// A private work directory `<store>/.staging/<name>-<nonce>`.
///
/// Removed on drop unless it has been installed.
#[derive(Debug)]
pub struct StagingArea {
    root: PathBuf,
    pub files: Vec<PathBuf>,
    installed: bool,
}

impl StagingArea {
    pub fn create(store: &Path, name: &str) -> io::Result<Self> {
        let parent = store.join(STAGING_DIR);
        fs::create_dir_all(&parent)?;
        loop {
            let root = parent.join(format!("{name}-{}", nonce()));
            match fs::create_dir(&root) {
                Ok(()) => {
                    return Ok(Self {
                        root,
                        files: Vec::new(),
                        installed: false,
                    })
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Removes the staging directory now.
    pub fn discard(mut self) -> io::Result<()> {
        self.installed = true;
        remove_tree(&self.root)
    }
}

impl Drop for StagingArea {
    fn drop(&mut self) {
        if !self.installed {
            if let Err(e) = remove_tree(&self.root) {
                log::warn!("could not remove staging directory {}: {e}", self.root.display());
            }
        }
    }
}

fn remove_tree(path: &Path) -> io::Result<()> {
    match fs::remove_dir_all(path) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstallOutcome {
    /// Our staging directory became the final directory.
    Installed,
    /// Another resolver installed first; ours was discarded.
    LostRace,
}

#[derive(Debug, Error)]
#[error("cannot install into {path}: {source}")]
pub struct InstallError {
    pub path: PathBuf,
    pub source: io::Error,
}

/// Publishes `staging` as `final_dir` with a single rename.
///
/// If `final_dir` already holds content the staged copy is dropped and the
/// existing directory is accepted.
pub fn install(staging: StagingArea, final_dir: &Path) -> Result<InstallOutcome, InstallError> {
    if is_populated_dir(final_dir) {
        drop(staging);
        return Ok(InstallOutcome::LostRace);
    }
    match fs::rename(&staging.root, final_dir) {
        Ok(()) => {
            let mut staging = staging;
            staging.installed = true;
            Ok(InstallOutcome::Installed)
        }
        Err(_) if is_populated_dir(final_dir) => {
            drop(staging);
            Ok(InstallOutcome::LostRace)
        }
        Err(source) => Err(InstallError {
            path: final_dir.to_path_buf(),
            source,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staged(store: &Path, name: &str, content: &[u8]) -> StagingArea {
        let s = StagingArea::create(store, name).unwrap();
        fs::write(s.root().join("data.txt"), content).unwrap();
        s
    }

    #[test]
    fn nonce_is_twelve_hex() {
        let n = nonce();
        assert_eq!(n.len(), 12);
        assert!(n.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()));
    }

    #[test]
    fn staging_root_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let s = StagingArea::create(tmp.path(), "D").unwrap();
        let rel = s.root().strip_prefix(tmp.path()).unwrap();
        let rel = rel.to_str().unwrap();
        assert!(rel.starts_with(".staging/D-"), "{rel}");
        assert_eq!(rel.len(), ".staging/D-".len() + 12);
    }

    #[test]
    fn normal_install() {
        let tmp = tempfile::tempdir().unwrap();
        let s = staged(tmp.path(), "D", b"x");
        let root = s.root().to_path_buf();
        let final_dir = tmp.path().join("D");
        assert_eq!(install(s, &final_dir).unwrap(), InstallOutcome::Installed);
        assert_eq!(fs::read(final_dir.join("data.txt")).unwrap(), b"x");
        assert!(!root.exists());
    }

    #[test]
    fn lost_race_keeps_existing() {
        let tmp = tempfile::tempdir().unwrap();
        let final_dir = tmp.path().join("D");
        fs::create_dir(&final_dir).unwrap();
        fs::write(final_dir.join("winner.txt"), b"w").unwrap();
        let s = staged(tmp.path(), "D", b"loser");
        let root = s.root().to_path_buf();
        assert_eq!(install(s, &final_dir).unwrap(), InstallOutcome::LostRace);
        assert!(!root.exists());
        let names: Vec<_> = fs::read_dir(&final_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec!["winner.txt"]);
    }

    #[test]
    fn empty_final_dir_is_replaced() {
        let tmp = tempfile::tempdir().unwrap();
        let final_dir = tmp.path().join("D");
        fs::create_dir(&final_dir).unwrap();
        let s = staged(tmp.path(), "D", b"x");
        // Linux replaces an empty directory on rename; elsewhere this may fail.
        if let Ok(outcome) = install(s, &final_dir) {
            assert_eq!(outcome, InstallOutcome::Installed);
            assert!(final_dir.join("data.txt").exists());
        }
    }

    #[test]
    fn failed_rename_reports_and_cleans_up() {
        let tmp = tempfile::tempdir().unwrap();
        let s = staged(tmp.path(), "D", b"x");
        let root = s.root().to_path_buf();
        let blocker = tmp.path().join("file");
        fs::write(&blocker, b"").unwrap();
        let final_dir = blocker.join("D");
        let err = install(s, &final_dir).unwrap_err();
        assert_eq!(err.path, final_dir);
        assert!(!final_dir.exists());
        assert!(!root.exists());
    }

    #[cfg(unix)]
    #[test]
    fn permission_denied_rename() {
        use std::os::unix::fs::PermissionsExt;
        let tmp = tempfile::tempdir().unwrap();
        let store = tmp.path().join("store");
        fs::create_dir(&store).unwrap();
        let s = staged(&store, "D", b"x");
        fs::set_permissions(&store, fs::Permissions::from_mode(0o555)).unwrap();
        let probe = fs::create_dir(store.join("probe"));
        if probe.is_ok() {
            // Running with CAP_DAC_OVERRIDE; permissions are not enforced.
            fs::remove_dir(store.join("probe")).unwrap();
            fs::set_permissions(&store, fs::Permissions::from_mode(0o755)).unwrap();
            return;
        }
        let final_dir = store.join("D");
        assert!(install(s, &final_dir).is_err());
        assert!(!final_dir.exists());
        fs::set_permissions(&store, fs::Permissions::from_mode(0o755)).unwrap();
    }

    #[test]
    fn drop_removes_staging() {
        let tmp = tempfile::tempdir().unwrap();
        let s = staged(tmp.path(), "D", b"x");
        let root = s.root().to_path_buf();
        drop(s);
        assert!(!root.exists());
    }
}
