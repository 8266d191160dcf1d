//! Post-fetch processing: archive extraction confined to the staging root.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

use super::staging::StagingArea;
use crate::registry::PostFetchAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchiveKind {
    Zip,
    Tar,
    TarGz,
    TarBz2,
    TarXz,
    /// A single gzip-compressed file.
    Gz,
}

impl ArchiveKind {
    /// Detects the format from the filename suffix (case-insensitive).
    pub fn detect(filename: &str) -> Option<ArchiveKind> {
        let lower = filename.to_ascii_lowercase();
        let table = [
            (".tar.gz", ArchiveKind::TarGz),
            (".tgz", ArchiveKind::TarGz),
            (".tar.bz2", ArchiveKind::TarBz2),
            (".tar.xz", ArchiveKind::TarXz),
            (".tar", ArchiveKind::Tar),
            (".zip", ArchiveKind::Zip),
            (".gz", ArchiveKind::Gz),
        ];
        table
            .into_iter()
            .find(|(suffix, _)| lower.len() > suffix.len() && lower.ends_with(suffix))
            .map(|(_, kind)| kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PostFetchCause {
    CorruptArchive(String),
    UnsupportedFormat,
    PathTraversalEntry(String),
    Io(String),
}

impl fmt::Display for PostFetchCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostFetchCause::CorruptArchive(e) => write!(f, "corrupt archive: {e}"),
            PostFetchCause::UnsupportedFormat => write!(f, "not a recognised archive format"),
            PostFetchCause::PathTraversalEntry(entry) => {
                write!(f, "archive entry {entry:?} would escape the destination")
            }
            PostFetchCause::Io(e) => write!(f, "I/O error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("post-fetch processing of {file} failed: {cause}")]
pub struct PostFetchError {
    pub file: String,
    pub cause: PostFetchCause,
}

/// Applies `action` to the staged files. Returns the names of archives that
/// were extracted and deleted.
pub fn post_fetch(action: PostFetchAction, staging: &StagingArea) -> Result<Vec<String>, PostFetchError> {
    if action == PostFetchAction::None {
        return Ok(Vec::new());
    }
    let archives: Vec<(PathBuf, ArchiveKind)> = staging
        .files
        .iter()
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            ArchiveKind::detect(name).map(|k| (p.clone(), k))
        })
        .collect();
    if archives.is_empty() {
        let file = staging
            .files
            .first()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Err(PostFetchError {
            file,
            cause: PostFetchCause::UnsupportedFormat,
        });
    }
    let mut deleted = Vec::new();
    for (path, kind) in archives {
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let fail = |cause| PostFetchError {
            file: file_name.clone(),
            cause,
        };
        extract(&path, kind, staging.root()).map_err(fail)?;
        if action == PostFetchAction::UnpackThenDeleteArchive {
            fs::remove_file(&path).map_err(|e| fail(PostFetchCause::Io(e.to_string())))?;
            deleted.push(file_name);
        }
    }
    Ok(deleted)
}

/// Extracts one archive into `dest`.
pub fn extract(archive: &Path, kind: ArchiveKind, dest: &Path) -> Result<(), PostFetchCause> {
    let open = || {
        File::open(archive)
            .map(BufReader::new)
            .map_err(|e| PostFetchCause::Io(e.to_string()))
    };
    match kind {
        ArchiveKind::Zip => extract_zip(open()?, dest),
        ArchiveKind::Tar => extract_tar(open()?, dest),
        ArchiveKind::TarGz => extract_tar(flate2::read::MultiGzDecoder::new(open()?), dest),
        ArchiveKind::TarBz2 => extract_tar(bzip2::read::MultiBzDecoder::new(open()?), dest),
        ArchiveKind::TarXz => extract_tar(xz2::read::XzDecoder::new_multi_decoder(open()?), dest),
        ArchiveKind::Gz => {
            let name = archive
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| PostFetchCause::Io("archive name is not UTF-8".into()))?;
            let target = dest.join(&name[..name.len() - 3]);
            let mut decoder = flate2::read::MultiGzDecoder::new(open()?);
            let mut out = File::create(&target).map_err(|e| PostFetchCause::Io(e.to_string()))?;
            io::copy(&mut decoder, &mut out).map_err(|e| match e.kind() {
                io::ErrorKind::InvalidInput | io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
                    PostFetchCause::CorruptArchive(e.to_string())
                }
                _ => PostFetchCause::Io(e.to_string()),
            })?;
            Ok(())
        }
    }
}

/// Normalises an archive entry path, rejecting anything that could escape.
fn confined_path(raw: &str) -> Result<PathBuf, PostFetchCause> {
    let reject = || PostFetchCause::PathTraversalEntry(raw.to_owned());
    // Zip entries written on Windows may use backslashes.
    let unified = raw.replace('\\', "/");
    if unified.starts_with('/') || raw.contains('\0') {
        return Err(reject());
    }
    let mut out = PathBuf::new();
    for component in Path::new(&unified).components() {
        match component {
            Component::Normal(part) => {
                if part.to_str().is_some_and(|s| s.len() >= 2 && s.as_bytes()[1] == b':') {
                    return Err(reject());
                }
                out.push(part)
            }
            Component::CurDir => {}
            Component::ParentDir | Component::RootDir | Component::Prefix(_) => return Err(reject()),
        }
    }
    Ok(out)
}

/// Link targets must stay relative and never climb upwards.
fn check_link_target(entry: &str, target: &str) -> Result<(), PostFetchCause> {
    let unified = target.replace('\\', "/");
    let escapes = unified.starts_with('/')
        || Path::new(&unified)
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir));
    if escapes || target.is_empty() {
        Err(PostFetchCause::PathTraversalEntry(format!("{entry} -> {target}")))
    } else {
        Ok(())
    }
}

fn extract_tar<R: Read>(reader: R, dest: &Path) -> Result<(), PostFetchCause> {
    let corrupt = |e: io::Error| PostFetchCause::CorruptArchive(e.to_string());
    let mut archive = tar::Archive::new(reader);
    archive.set_preserve_permissions(false);
    archive.set_unpack_xattrs(false);
    for entry in archive.entries().map_err(corrupt)? {
        let mut entry = entry.map_err(corrupt)?;
        let raw = String::from_utf8_lossy(&entry.path_bytes()).into_owned();
        let rel = confined_path(&raw)?;
        if rel.as_os_str().is_empty() {
            continue;
        }
        let kind = entry.header().entry_type();
        if kind.is_symlink() || kind.is_hard_link() {
            let target = entry
                .link_name_bytes()
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .unwrap_or_default();
            check_link_target(&raw, &target)?;
        }
        let unpacked = entry.unpack_in(dest).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof | io::ErrorKind::InvalidInput => {
                PostFetchCause::CorruptArchive(e.to_string())
            }
            _ => PostFetchCause::Io(e.to_string()),
        })?;
        if !unpacked {
            return Err(PostFetchCause::PathTraversalEntry(raw));
        }
    }
    Ok(())
}

fn extract_zip<R: Read + io::Seek>(reader: R, dest: &Path) -> Result<(), PostFetchCause> {
    let corrupt = |e: zip::result::ZipError| PostFetchCause::CorruptArchive(e.to_string());
    let mut archive = zip::ZipArchive::new(reader).map_err(corrupt)?;
    // Validate every entry before writing anything.
    let mut plan = Vec::with_capacity(archive.len());
    for i in 0..archive.len() {
        let entry = archive.by_index_raw(i).map_err(corrupt)?;
        let raw = entry.name().map_err(corrupt)?.into_owned();
        let rel = confined_path(&raw)?;
        plan.push(rel);
    }
    for (i, rel) in plan.into_iter().enumerate() {
        let mut entry = archive.by_index(i).map_err(corrupt)?;
        let entry_name = rel.display().to_string();
        if rel.as_os_str().is_empty() {
            continue;
        }
        let target = dest.join(&rel);
        let io_err = |e: io::Error| PostFetchCause::Io(e.to_string());
        if entry.is_dir() {
            fs::create_dir_all(&target).map_err(io_err)?;
            continue;
        }
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
            ensure_inside(dest, parent)?;
        }
        if entry.is_symlink() {
            let mut link = String::new();
            entry
                .read_to_string(&mut link)
                .map_err(|e| PostFetchCause::CorruptArchive(e.to_string()))?;
            check_link_target(&entry_name, &link)?;
            #[cfg(unix)]
            std::os::unix::fs::symlink(&link, &target).map_err(io_err)?;
            #[cfg(not(unix))]
            fs::write(&target, link.as_bytes()).map_err(io_err)?;
            continue;
        }
        let mut out = File::create(&target).map_err(io_err)?;
        io::copy(&mut entry, &mut out).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => PostFetchCause::CorruptArchive(e.to_string()),
            _ => PostFetchCause::Io(e.to_string()),
        })?;
        #[cfg(unix)]
        if let Some(mode) = entry.unix_mode() {
            use std::os::unix::fs::PermissionsExt;
            let _ = fs::set_permissions(&target, fs::Permissions::from_mode(mode & 0o755 | 0o600));
        }
    }
    Ok(())
}

/// Guards against an earlier symlink entry redirecting later writes.
fn ensure_inside(root: &Path, dir: &Path) -> Result<(), PostFetchCause> {
    let io_err = |e: io::Error| PostFetchCause::Io(e.to_string());
    let root = root.canonicalize().map_err(io_err)?;
    let dir = dir.canonicalize().map_err(io_err)?;
    if dir.starts_with(&root) {
        Ok(())
    } else {
        Err(PostFetchCause::PathTraversalEntry(dir.display().to_string()))
    }
}
