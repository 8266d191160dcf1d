//! Load-path construction and local lookup of already-present dependencies.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::registry::validate_name;

pub const ENV_LOAD_PATH: &str = "DATADEP_LOAD_PATH";
pub const ENV_STORE: &str = "DATADEP_STORE";

/// Sub-directory name used under every default location.
pub const DATADEPS_DIR: &str = "datadeps";

/// Snapshot of the environment variables the resolver cares about.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Env(BTreeMap<String, String>);

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_process() -> Self {
        Self(std::env::vars().collect())
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.0.insert(key.into(), value.into());
        self
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Like [`Env::get`] but treats an empty value as unset.
    pub fn get_nonempty(&self, key: &str) -> Option<&str> {
        self.get(key).filter(|v| !v.is_empty())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Env {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Platform {
    Posix,
    Windows,
}

impl Platform {
    pub fn current() -> Self {
        if cfg!(windows) {
            Platform::Windows
        } else {
            Platform::Posix
        }
    }

    pub fn list_separator(self) -> char {
        match self {
            Platform::Posix => ':',
            Platform::Windows => ';',
        }
    }

    fn dir_separator(self) -> char {
        match self {
            Platform::Posix => '/',
            Platform::Windows => '\\',
        }
    }

    /// Absolute-path test using the rules of this platform rather than the host's.
    pub fn is_absolute(self, path: &str) -> bool {
        match self {
            Platform::Posix => path.starts_with('/'),
            Platform::Windows => {
                let b = path.as_bytes();
                path.starts_with("\\\\")
                    || (b.len() >= 3 && b[0].is_ascii_alphabetic() && b[1] == b':' && matches!(b[2], b'\\' | b'/'))
            }
        }
    }

    fn join(self, base: &str, segment: &str) -> String {
        let sep = self.dir_separator();
        if base.ends_with(['/', '\\']) {
            format!("{base}{segment}")
        } else {
            format!("{base}{sep}{segment}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Env,
    WorkingDir,
    UserStore,
    SystemStore,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Env => "env",
            Origin::WorkingDir => "working-dir",
            Origin::UserStore => "user",
            Origin::SystemStore => "system",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadPathEntry {
    pub directory: PathBuf,
    pub origin: Origin,
}

/// Ordered candidate directories; earlier entries shadow later ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadPath {
    entries: Vec<LoadPathEntry>,
}

impl LoadPath {
    pub fn new(entries: Vec<LoadPathEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[LoadPathEntry] {
        &self.entries
    }

    pub fn push(&mut self, directory: impl Into<PathBuf>, origin: Origin) {
        self.entries.push(LoadPathEntry {
            directory: directory.into(),
            origin,
        });
    }

    pub fn prepend(&mut self, directory: impl Into<PathBuf>, origin: Origin) {
        self.entries.insert(
            0,
            LoadPathEntry {
                directory: directory.into(),
                origin,
            },
        );
    }

    pub fn contains_dir(&self, dir: &Path) -> bool {
        self.entries.iter().any(|e| e.directory == dir)
    }

    /// Every `<entry>/<name>` candidate, in search order.
    pub fn candidates<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (PathBuf, Origin)> + 'a {
        self.entries.iter().map(move |e| (e.directory.join(name), e.origin))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatisfiedBy {
    FoundLocal(Origin),
    Fetched,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub path: PathBuf,
    pub satisfied_by: SatisfiedBy,
}

/// Builds the search order from the environment.
///
/// Order: `DATADEP_LOAD_PATH` entries, `<working_dir>/datadeps`, the user
/// data directory, then the system data directory. `env` is consulted for
/// `HOME`, `XDG_DATA_HOME`, `LOCALAPPDATA` and `PROGRAMDATA`; the process
/// environment is never read here.
pub fn build_load_path(env: &Env, platform: Platform, working_dir: &Path) -> LoadPath {
    let wd = working_dir.to_string_lossy();
    let mut lp = LoadPath::default();

    if let Some(list) = env.get(ENV_LOAD_PATH) {
        for seg in list.split(platform.list_separator()).filter(|s| !s.is_empty()) {
            let dir = if platform.is_absolute(seg) {
                seg.to_owned()
            } else {
                platform.join(&wd, seg)
            };
            lp.push(dir, Origin::Env);
        }
    }

    lp.push(platform.join(&wd, DATADEPS_DIR), Origin::WorkingDir);

    if let Some(user) = user_data_dir(env, platform) {
        lp.push(platform.join(&user, DATADEPS_DIR), Origin::UserStore);
    }

    let system = match platform {
        Platform::Posix => "/usr/share/datadeps".to_owned(),
        Platform::Windows => {
            let base = env
                .get_nonempty("PROGRAMDATA")
                .filter(|p| platform.is_absolute(p))
                .unwrap_or("C:\\ProgramData");
            platform.join(base, DATADEPS_DIR)
        }
    };
    lp.push(system, Origin::SystemStore);
    lp
}

fn user_data_dir(env: &Env, platform: Platform) -> Option<String> {
    match platform {
        Platform::Posix => {
            // Relative XDG values are invalid and ignored.
            if let Some(xdg) = env.get_nonempty("XDG_DATA_HOME").filter(|p| platform.is_absolute(p)) {
                return Some(xdg.to_owned());
            }
            env.get_nonempty("HOME")
                .filter(|p| platform.is_absolute(p))
                .map(|home| platform.join(&platform.join(home, ".local"), "share"))
        }
        Platform::Windows => env
            .get_nonempty("LOCALAPPDATA")
            .filter(|p| platform.is_absolute(p))
            .map(str::to_owned),
    }
}

/// True if `dir` is a directory with at least one entry. Read errors are
/// logged and treated as absence.
pub fn is_populated_dir(dir: &Path) -> bool {
    match fs::read_dir(dir) {
        Ok(mut it) => it.next().is_some(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => false,
        Err(e) if e.kind() == io::ErrorKind::NotADirectory => false,
        Err(e) => {
            log::warn!("skipping unreadable load-path candidate {}: {e}", dir.display());
            false
        }
    }
}

/// Returns the first load-path entry holding a non-empty `<name>` directory.
///
/// Performs no writes and no network activity.
pub fn search(load_path: &LoadPath, name: &str) -> Option<Resolution> {
    if validate_name(name).is_err() {
        return None;
    }
    load_path
        .candidates(name)
        .find(|(path, _)| path.is_dir() && is_populated_dir(path))
        .map(|(path, origin)| Resolution {
            path,
            satisfied_by: SatisfiedBy::FoundLocal(origin),
        })
}

#[derive(Debug, Error)]
#[error("no writable store directory{}", format_attempts(.attempts))]
pub struct NoWritableStore {
    pub attempts: Vec<(PathBuf, io::Error)>,
}

fn format_attempts(attempts: &[(PathBuf, io::Error)]) -> String {
    if attempts.is_empty() {
        return " (no candidate locations)".to_owned();
    }
    let parts: Vec<String> = attempts.iter().map(|(p, e)| format!("{}: {e}", p.display())).collect();
    format!(" (tried {})", parts.join("; "))
}

/// Where newly fetched dependencies are installed, without touching the disk.
///
/// `DATADEP_STORE` wins; otherwise the first user-store entry, then system
/// entries, in load-path order.
pub fn store_candidates(load_path: &LoadPath, env: &Env) -> Vec<PathBuf> {
    if let Some(store) = env.get_nonempty(ENV_STORE) {
        let p = Path::new(store);
        let abs = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        return vec![abs];
    }
    let by_origin = |origin| {
        load_path
            .entries()
            .iter()
            .filter(move |e| e.origin == origin)
            .map(|e| e.directory.clone())
    };
    by_origin(Origin::UserStore)
        .take(1)
        .chain(by_origin(Origin::SystemStore))
        .collect()
}

/// Returns the writable store directory, creating it if absent.
pub fn store_dir(load_path: &LoadPath, env: &Env) -> Result<PathBuf, NoWritableStore> {
    let mut attempts = Vec::new();
    for dir in store_candidates(load_path, env) {
        match ensure_writable(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) => attempts.push((dir, e)),
        }
    }
    Err(NoWritableStore { attempts })
}

fn ensure_writable(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(format!(".datadep-probe-{}", crate::acquire::staging::nonce()));
    fs::File::create(&probe)?;
    fs::remove_file(&probe)
}
