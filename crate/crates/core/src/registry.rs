//! Data-dependency declarations and the name-indexed registry that holds them.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;
use url::Url;

/// Maximum length of a dependency name, in characters.
pub const MAX_NAME_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("name is empty")]
    Empty,
    #[error("illegal character at position {0}")]
    IllegalChar(usize),
    #[error("name is longer than {MAX_NAME_LEN} characters")]
    TooLong,
    #[error("name is reserved")]
    Reserved,
}

/// Checks that `name` can be used verbatim as a single directory component.
///
/// The first character must be `[A-Za-z0-9_]`; the rest may also contain
/// space, `.` and `-`. Positions in [`NameError::IllegalChar`] are 0-based
/// character offsets.
pub fn validate_name(name: &str) -> Result<(), NameError> {
    if name.is_empty() {
        return Err(NameError::Empty);
    }
    if name == "." || name == ".." {
        return Err(NameError::Reserved);
    }
    for (pos, c) in name.chars().enumerate() {
        let ok = if pos == 0 {
            c.is_ascii_alphanumeric() || c == '_'
        } else {
            c.is_ascii_alphanumeric() || matches!(c, '_' | ' ' | '.' | '-')
        };
        if !ok {
            return Err(NameError::IllegalChar(pos));
        }
    }
    if name.chars().count() > MAX_NAME_LEN {
        return Err(NameError::TooLong);
    }
    // Windows strips these silently, so "a." and "a" would alias.
    if name.ends_with('.') || name.ends_with(' ') {
        return Err(NameError::IllegalChar(name.chars().count() - 1));
    }
    if is_windows_device_name(name) {
        return Err(NameError::Reserved);
    }
    Ok(())
}

fn is_windows_device_name(name: &str) -> bool {
    let stem = name.split('.').next().unwrap_or(name).to_ascii_uppercase();
    matches!(stem.as_str(), "CON" | "PRN" | "AUX" | "NUL")
        || ((stem.starts_with("COM") || stem.starts_with("LPT"))
            && stem.len() == 4
            && stem.as_bytes()[3].is_ascii_digit()
            && stem.as_bytes()[3] != b'0')
}

/// A single downloadable source of a dependency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteFile {
    pub url: String,
    pub filename_override: Option<String>,
}

impl RemoteFile {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            filename_override: None,
        }
    }

    pub fn with_filename(url: impl Into<String>, filename: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            filename_override: Some(filename.into()),
        }
    }
}

/// Returns an error message if `url` is not an absolute http(s) URL.
pub fn check_url(url: &str) -> Result<Url, String> {
    let parsed = Url::parse(url).map_err(|e| format!("invalid URL {url:?}: {e}"))?;
    match parsed.scheme() {
        "http" | "https" => Ok(parsed),
        other => Err(format!("unsupported URL scheme {other:?} in {url:?}")),
    }
}

/// Returns an error message if `filename` is not a single relative path segment.
pub fn check_filename(filename: &str) -> Result<(), String> {
    if filename.is_empty() || filename == "." || filename == ".." {
        return Err(format!("filename {filename:?} is not a usable file name"));
    }
    if filename.contains(['/', '\\', '\0']) {
        return Err(format!("filename {filename:?} contains a path separator"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChecksumAlgorithm {
    #[default]
    Sha256,
}

impl ChecksumAlgorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            ChecksumAlgorithm::Sha256 => "sha256",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        name.eq_ignore_ascii_case("sha256").then_some(ChecksumAlgorithm::Sha256)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChecksumMode {
    /// Fail on mismatch; one lowercase hex digest per remote source.
    Enforce(Vec<String>),
    /// Explicit opt-out: report digests, never fail.
    Ignore,
    /// No checksum declared: report digests and suggest pinning them.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChecksumSpec {
    pub algorithm: ChecksumAlgorithm,
    pub mode: ChecksumMode,
}

impl ChecksumSpec {
    pub fn enforce<I, S>(digests: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            algorithm: ChecksumAlgorithm::Sha256,
            mode: ChecksumMode::Enforce(digests.into_iter().map(|d| d.into().to_ascii_lowercase()).collect()),
        }
    }

    pub fn ignore() -> Self {
        Self {
            algorithm: ChecksumAlgorithm::Sha256,
            mode: ChecksumMode::Ignore,
        }
    }

    pub fn absent() -> Self {
        Self {
            algorithm: ChecksumAlgorithm::Sha256,
            mode: ChecksumMode::Absent,
        }
    }

    pub fn is_enforced(&self) -> bool {
        matches!(self.mode, ChecksumMode::Enforce(_))
    }
}

/// True if `digest` is exactly 64 lowercase hex characters.
pub fn is_sha256_hex(digest: &str) -> bool {
    digest.len() == 64 && digest.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PostFetchAction {
    #[default]
    None,
    /// Extract recognised archives and keep them for later re-verification.
    UnpackAuto,
    /// Extract recognised archives, then delete them.
    UnpackThenDeleteArchive,
}

impl PostFetchAction {
    pub fn as_str(self) -> &'static str {
        match self {
            PostFetchAction::None => "none",
            PostFetchAction::UnpackAuto => "unpack",
            PostFetchAction::UnpackThenDeleteArchive => "unpack-delete",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "none" => Some(PostFetchAction::None),
            "unpack" => Some(PostFetchAction::UnpackAuto),
            "unpack-delete" => Some(PostFetchAction::UnpackThenDeleteArchive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepKind {
    #[default]
    Managed,
    Manual,
}

impl DepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DepKind::Managed => "managed",
            DepKind::Manual => "manual",
        }
    }
}

/// Optional structured provenance, appended to the free-text message when shown.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub author: Option<String>,
    pub license: Option<String>,
    pub citation: Option<String>,
    pub website: Option<String>,
}

impl Provenance {
    pub fn is_empty(&self) -> bool {
        self.fields().next().is_none()
    }

    /// `(label, value)` pairs for the fields that are set, in display order.
    pub fn fields(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [
            ("Author", &self.author),
            ("License", &self.license),
            ("Citation", &self.citation),
            ("Website", &self.website),
        ]
        .into_iter()
        .filter_map(|(label, value)| value.as_deref().map(|v| (label, v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDepSpec {
    pub name: String,
    pub message: String,
    pub provenance: Provenance,
    pub remote_sources: Vec<RemoteFile>,
    pub checksum: ChecksumSpec,
    pub post_fetch: PostFetchAction,
    pub kind: DepKind,
    /// Per-request HTTP timeout; `None` uses the client default.
    pub timeout_secs: Option<u64>,
}

impl DataDepSpec {
    /// A managed dependency with no checksum declared and no post-fetch step.
    pub fn managed(name: impl Into<String>, message: impl Into<String>, sources: Vec<RemoteFile>) -> Self {
        Self {
            name: name.into(),
            message: message.into(),
            provenance: Provenance::default(),
            remote_sources: sources,
            checksum: ChecksumSpec::absent(),
            post_fetch: PostFetchAction::None,
            kind: DepKind::Managed,
            timeout_secs: None,
        }
    }

    pub fn manual(name: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: DepKind::Manual,
            ..Self::managed(name, message, Vec::new())
        }
    }

    pub fn with_checksum(mut self, checksum: ChecksumSpec) -> Self {
        self.checksum = checksum;
        self
    }

    pub fn with_post_fetch(mut self, action: PostFetchAction) -> Self {
        self.post_fetch = action;
        self
    }

    pub fn with_timeout_secs(mut self, secs: u64) -> Self {
        self.timeout_secs = Some(secs);
        self
    }

    pub fn is_manual(&self) -> bool {
        self.kind == DepKind::Manual
    }

    /// The message shown to users: free text followed by any structured provenance.
    pub fn display_message(&self) -> String {
        let mut out = self.message.clone();
        for (label, value) in self.provenance.fields() {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(label);
            out.push_str(": ");
            out.push_str(value);
        }
        out
    }

    pub fn validate(&self) -> Result<(), SpecViolation> {
        validate_name(&self.name).map_err(SpecViolation::Name)?;
        match self.kind {
            DepKind::Manual => {
                if !self.remote_sources.is_empty() {
                    return Err(SpecViolation::ManualWithSources);
                }
                if self.checksum.mode != ChecksumMode::Absent {
                    return Err(SpecViolation::ManualWithChecksum);
                }
            }
            DepKind::Managed => {
                if self.remote_sources.is_empty() {
                    return Err(SpecViolation::NoSources);
                }
            }
        }
        for remote in &self.remote_sources {
            check_url(&remote.url).map_err(SpecViolation::BadUrl)?;
            if let Some(f) = &remote.filename_override {
                check_filename(f).map_err(SpecViolation::BadFilename)?;
            }
        }
        if let ChecksumMode::Enforce(digests) = &self.checksum.mode {
            if digests.len() != self.remote_sources.len() {
                return Err(SpecViolation::DigestCount {
                    digests: digests.len(),
                    sources: self.remote_sources.len(),
                });
            }
            if let Some(bad) = digests.iter().find(|d| !is_sha256_hex(d)) {
                return Err(SpecViolation::BadDigest(bad.clone()));
            }
        }
        if self.timeout_secs == Some(0) {
            return Err(SpecViolation::ZeroTimeout);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecViolation {
    #[error("invalid name: {0}")]
    Name(NameError),
    #[error("manual dependencies cannot have remote sources")]
    ManualWithSources,
    #[error("manual dependencies cannot declare a checksum")]
    ManualWithChecksum,
    #[error("managed dependencies need at least one remote source")]
    NoSources,
    #[error("{0}")]
    BadUrl(String),
    #[error("{0}")]
    BadFilename(String),
    #[error("{digests} digests declared for {sources} remote sources")]
    DigestCount { digests: usize, sources: usize },
    #[error("digest {0:?} is not 64 lowercase hex characters")]
    BadDigest(String),
    #[error("timeout must be at least one second")]
    ZeroTimeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("a dependency named {existing:?} is already registered")]
    DuplicateName { existing: String },
    #[error("invalid dependency {name:?}: {violation}")]
    InvalidSpec { name: String, violation: SpecViolation },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct NotRegistered {
    pub name: String,
    pub suggestion: Option<String>,
}

impl fmt::Display for NotRegistered {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no data dependency named {:?} is registered", self.name)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean {s:?}?)")?;
        }
        Ok(())
    }
}

/// An immutable, insertion-ordered set of declarations keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    specs: Vec<DataDepSpec>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns a registry containing every existing entry plus `spec`.
    ///
    /// Names that differ from an existing entry only by ASCII case are
    /// rejected as duplicates, since they would alias on case-insensitive
    /// filesystems.
    pub fn register(mut self, spec: DataDepSpec) -> Result<Registry, RegistrationError> {
        spec.validate().map_err(|violation| RegistrationError::InvalidSpec {
            name: spec.name.clone(),
            violation,
        })?;
        if let Some(existing) = self.specs.iter().find(|s| s.name.eq_ignore_ascii_case(&spec.name)) {
            return Err(RegistrationError::DuplicateName {
                existing: existing.name.clone(),
            });
        }
        self.index.insert(spec.name.clone(), self.specs.len());
        self.specs.push(spec);
        Ok(self)
    }

    pub fn from_specs<I>(specs: I) -> Result<Registry, RegistrationError>
    where
        I: IntoIterator<Item = DataDepSpec>,
    {
        specs.into_iter().try_fold(Registry::new(), Registry::register)
    }

    pub fn lookup(&self, name: &str) -> Result<&DataDepSpec, NotRegistered> {
        match self.index.get(name) {
            Some(&i) => Ok(&self.specs[i]),
            None => Err(NotRegistered {
                name: name.to_owned(),
                suggestion: self.suggest(name),
            }),
        }
    }

    /// Nearest registered name within edit distance 2, earliest on ties.
    fn suggest(&self, name: &str) -> Option<String> {
        self.specs
            .iter()
            .map(|s| (strsim::levenshtein(name, &s.name), &s.name))
            .filter(|(d, _)| *d <= 2)
            .min_by_key(|(d, _)| *d)
            .map(|(_, n)| n.clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataDepSpec> {
        self.specs.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}
