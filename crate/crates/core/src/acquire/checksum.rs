//! Streaming SHA-256 digests and checksum-policy evaluation.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::registry::{ChecksumMode, ChecksumSpec};

const BUF_SIZE: usize = 64 * 1024;

/// Hashes everything `reader` yields, returning the lowercase hex digest and byte count.
pub fn sha256_reader<R: Read>(mut reader: R) -> io::Result<(String, u64)> {
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; BUF_SIZE];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

pub fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    sha256_reader(File::open(path)?)
}

pub fn sha256_bytes(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub computed: String,
    /// `None` unless the policy is Enforce.
    pub expected: Option<String>,
}

impl FileDigest {
    pub fn matches(&self) -> bool {
        self.expected
            .as_deref()
            .is_none_or(|e| e.eq_ignore_ascii_case(&self.computed))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChecksumReport {
    pub files: Vec<FileDigest>,
}

impl ChecksumReport {
    pub fn mismatches(&self) -> impl Iterator<Item = (usize, &FileDigest)> {
        self.files.iter().enumerate().filter(|(_, f)| !f.matches())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChecksumOutcome {
    Pass(ChecksumReport),
    Fail(ChecksumReport),
    /// Ignore or Absent mode: digests computed, nothing enforced.
    Warned(ChecksumReport),
}

impl ChecksumOutcome {
    pub fn report(&self) -> &ChecksumReport {
        match self {
            ChecksumOutcome::Pass(r) | ChecksumOutcome::Fail(r) | ChecksumOutcome::Warned(r) => r,
        }
    }
}

#[derive(Debug, Error)]
pub enum ChecksumError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{digests} expected digests for {files} files")]
    CountMismatch { digests: usize, files: usize },
}

/// Digests each file and compares against the policy. A mismatch is an
/// outcome, not an error.
pub fn verify_checksum(spec: &ChecksumSpec, files: &[PathBuf]) -> Result<ChecksumOutcome, ChecksumError> {
    let expected: Vec<Option<&str>> = match &spec.mode {
        ChecksumMode::Enforce(digests) => {
            if digests.len() != files.len() {
                return Err(ChecksumError::CountMismatch {
                    digests: digests.len(),
                    files: files.len(),
                });
            }
            digests.iter().map(|d| Some(d.as_str())).collect()
        }
        ChecksumMode::Ignore | ChecksumMode::Absent => vec![None; files.len()],
    };
    let mut report = ChecksumReport::default();
    for (path, expected) in files.iter().zip(expected) {
        let (computed, bytes) = sha256_file(path).map_err(|source| ChecksumError::Io {
            path: path.clone(),
            source,
        })?;
        report.files.push(FileDigest {
            path: path.clone(),
            bytes,
            computed,
            expected: expected.map(str::to_ascii_lowercase),
        });
    }
    Ok(match spec.mode {
        ChecksumMode::Enforce(_) if report.mismatches().next().is_none() => ChecksumOutcome::Pass(report),
        ChecksumMode::Enforce(_) => ChecksumOutcome::Fail(report),
        _ => ChecksumOutcome::Warned(report),
    })
}
