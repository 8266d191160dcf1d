//! `DataDeps.toml`: the on-disk declaration file.
//!
//! ```toml
//! version = 1
//!
//! [[datadep]]
//! name = "MNIST"
//! message = "The MNIST database of handwritten digits."
//! urls = ["https://example.org/mnist.tar.gz"]
//! sha256 = "…64 hex chars…"
//! post_fetch = "unpack"
//! ```
//!
//! Parsing is strict: unknown keys are errors, and every problem in the file
//! is reported rather than just the first.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;
use toml_edit::{Item, Table};

use crate::registry::{
    check_filename, check_url, is_sha256_hex, validate_name, ChecksumAlgorithm, ChecksumMode, ChecksumSpec,
    DataDepSpec, DepKind, PostFetchAction, Provenance, RegistrationError, Registry, RemoteFile,
};

pub const FORMAT_VERSION: i64 = 1;
pub const DEFAULT_MANIFEST: &str = "DataDeps.toml";

const DEP_FIELDS: &[&str] = &[
    "name",
    "message",
    "urls",
    "sha256",
    "post_fetch",
    "manual",
    "filename",
    "timeout_secs",
    "author",
    "license",
    "citation",
    "website",
];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub format_version: i64,
    pub deps: Vec<DataDepSpec>,
}

impl Manifest {
    pub fn new(deps: Vec<DataDepSpec>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            deps,
        }
    }

    pub fn to_registry(&self) -> Result<Registry, RegistrationError> {
        Registry::from_specs(self.deps.iter().cloned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownField,
    MissingField,
    InvalidValue,
    DuplicateName,
    UnsupportedVersion,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "syntax",
            ParseErrorKind::UnknownField => "unknown-field",
            ParseErrorKind::MissingField => "missing-field",
            ParseErrorKind::InvalidValue => "invalid-value",
            ParseErrorKind::DuplicateName => "duplicate-name",
            ParseErrorKind::UnsupportedVersion => "unsupported-version",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub kind: ParseErrorKind,
    /// 1-based line, when known.
    pub line: Option<usize>,
    /// Dotted path of the offending field, e.g. `datadep[0].sha256`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        write!(f, "{} ({})", self.message, self.kind.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub issues: Vec<ParseIssue>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.issues.len();
        write!(f, "{n} error{} in manifest", if n == 1 { "" } else { "s" })?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text).map_err(|source| ManifestError::Parse {
        path: path.display().to_string(),
        source,
    })
}

struct Collector<'t> {
    text: &'t str,
    issues: Vec<ParseIssue>,
}

impl Collector<'_> {
    fn line_of(&self, span: Option<std::ops::Range<usize>>) -> Option<usize> {
        span.map(|r| self.text[..r.start.min(self.text.len())].matches('\n').count() + 1)
    }

    fn push(
        &mut self,
        kind: ParseErrorKind,
        line: Option<usize>,
        field: impl Into<String>,
        message: impl Into<String>,
    ) {
        self.issues.push(ParseIssue {
            kind,
            line,
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Parses manifest text. On failure every detected problem is returned.
pub fn parse_manifest(text: &str) -> Result<Manifest, ParseError> {
    let doc = match toml_edit::Document::parse(text) {
        Ok(doc) => doc,
        Err(e) => {
            let c = Collector {
                text,
                issues: Vec::new(),
            };
            let line = c.line_of(e.span());
            return Err(ParseError {
                issues: vec![ParseIssue {
                    kind: ParseErrorKind::Syntax,
                    line,
                    field: String::new(),
                    message: e.message().trim().to_owned(),
                }],
            });
        }
    };
    let mut c = Collector {
        text,
        issues: Vec::new(),
    };
    let root = doc.as_table();

    for (key, _) in root.iter() {
        if key != "version" && key != "datadep" {
            let line = c.line_of(root.get_key_value(key).and_then(|(k, _)| k.span()));
            c.push(
                ParseErrorKind::UnknownField,
                line,
                key,
                format!("unknown top-level field {key:?}"),
            );
        }
    }

    let mut format_version = FORMAT_VERSION;
    match root.get_key_value("version") {
        None => c.push(
            ParseErrorKind::MissingField,
            Some(1),
            "version",
            "missing `version = 1`",
        ),
        Some((k, item)) => {
            let line = c.line_of(k.span());
            match item.as_integer() {
                Some(FORMAT_VERSION) => {}
                Some(v) => {
                    format_version = v;
                    c.push(
                        ParseErrorKind::UnsupportedVersion,
                        line,
                        "version",
                        format!("manifest version {v} is not supported (expected {FORMAT_VERSION})"),
                    )
                }
                None => c.push(ParseErrorKind::InvalidValue, line, "version", "expected an integer"),
            }
        }
    }

    let mut deps = Vec::new();
    if let Some((k, item)) = root.get_key_value("datadep") {
        match item.as_array_of_tables() {
            Some(tables) => {
                for (i, table) in tables.iter().enumerate() {
                    let header_line = c.line_of(table.span());
                    if let Some(spec) = parse_dep(&mut c, i, table, header_line) {
                        deps.push((i, header_line, spec));
                    }
                }
            }
            None => {
                let line = c.line_of(k.span());
                c.push(
                    ParseErrorKind::InvalidValue,
                    line,
                    "datadep",
                    "dependencies must be declared as [[datadep]] tables",
                );
            }
        }
    }

    for (pos, (index, line, spec)) in deps.iter().enumerate() {
        if let Some((_, _, first)) = deps[..pos]
            .iter()
            .find(|(_, _, d)| d.name.eq_ignore_ascii_case(&spec.name))
        {
            c.push(
                ParseErrorKind::DuplicateName,
                *line,
                format!("datadep[{index}].name"),
                format!("name {:?} is already used by {:?}", spec.name, first.name),
            );
        }
    }

    if c.issues.is_empty() {
        Ok(Manifest {
            format_version,
            deps: deps.into_iter().map(|(_, _, spec)| spec).collect(),
        })
    } else {
        Err(ParseError { issues: c.issues })
    }
}

fn parse_dep(c: &mut Collector<'_>, index: usize, table: &Table, header_line: Option<usize>) -> Option<DataDepSpec> {
    let before = c.issues.len();
    let path = |field: &str| format!("datadep[{index}].{field}");
    let line_of_key = |c: &Collector<'_>, key: &str| {
        table
            .get_key_value(key)
            .and_then(|(k, _)| c.line_of(k.span()))
            .or(header_line)
    };

    for (key, _) in table.iter() {
        if !DEP_FIELDS.contains(&key) {
            let line = line_of_key(c, key);
            let hint = DEP_FIELDS
                .iter()
                .find(|f| strsim::levenshtein(f, key) <= 2)
                .map(|f| format!(" (did you mean {f:?}?)"))
                .unwrap_or_default();
            c.push(
                ParseErrorKind::UnknownField,
                line,
                path(key),
                format!("unknown field {key:?}{hint}"),
            );
        }
    }

    let string_field = |c: &mut Collector<'_>, key: &str, required: bool| -> Option<String> {
        let line = line_of_key(c, key);
        match table.get(key) {
            None if required => {
                c.push(
                    ParseErrorKind::MissingField,
                    header_line,
                    path(key),
                    format!("missing required field {key:?}"),
                );
                None
            }
            None => None,
            Some(item) => match item.as_str() {
                Some(s) => Some(s.to_owned()),
                None => {
                    c.push(ParseErrorKind::InvalidValue, line, path(key), "expected a string");
                    None
                }
            },
        }
    };

    let name = string_field(c, "name", true);
    if let Some(n) = &name {
        if let Err(e) = validate_name(n) {
            let line = line_of_key(c, "name");
            c.push(
                ParseErrorKind::InvalidValue,
                line,
                path("name"),
                format!("invalid name {n:?}: {e}"),
            );
        }
    }
    let message = string_field(c, "message", true);
    let provenance = Provenance {
        author: string_field(c, "author", false),
        license: string_field(c, "license", false),
        citation: string_field(c, "citation", false),
        website: string_field(c, "website", false),
    };

    let manual = match table.get("manual") {
        None => false,
        Some(item) => item.as_bool().unwrap_or_else(|| {
            let line = line_of_key(c, "manual");
            c.push(
                ParseErrorKind::InvalidValue,
                line,
                path("manual"),
                "expected true or false",
            );
            false
        }),
    };

    let urls = match table.get("urls") {
        None => {
            if !manual {
                c.push(
                    ParseErrorKind::MissingField,
                    header_line,
                    path("urls"),
                    "missing required field \"urls\"",
                );
            }
            Vec::new()
        }
        Some(item) => {
            let line = line_of_key(c, "urls");
            if manual {
                c.push(
                    ParseErrorKind::InvalidValue,
                    line,
                    path("urls"),
                    "manual dependencies cannot have urls",
                );
            }
            match string_list(item) {
                Some(list) if list.is_empty() && !manual => {
                    c.push(
                        ParseErrorKind::InvalidValue,
                        line,
                        path("urls"),
                        "at least one url is required",
                    );
                    list
                }
                Some(list) => {
                    for (j, url) in list.iter().enumerate() {
                        if let Err(e) = check_url(url) {
                            c.push(ParseErrorKind::InvalidValue, line, format!("{}[{j}]", path("urls")), e);
                        }
                    }
                    list
                }
                None => {
                    c.push(
                        ParseErrorKind::InvalidValue,
                        line,
                        path("urls"),
                        "expected an array of strings",
                    );
                    Vec::new()
                }
            }
        }
    };

    let checksum = match table.get("sha256") {
        None => ChecksumSpec::absent(),
        Some(item) => {
            let line = line_of_key(c, "sha256");
            if manual {
                c.push(
                    ParseErrorKind::InvalidValue,
                    line,
                    path("sha256"),
                    "manual dependencies cannot declare a checksum",
                );
            }
            if item.as_str() == Some("ignore") {
                ChecksumSpec::ignore()
            } else {
                match one_or_many(item) {
                    None => {
                        c.push(
                            ParseErrorKind::InvalidValue,
                            line,
                            path("sha256"),
                            "expected a string or an array of strings",
                        );
                        ChecksumSpec::absent()
                    }
                    Some(raw) => {
                        let mut digests = Vec::with_capacity(raw.len());
                        for (j, d) in raw.iter().enumerate() {
                            match parse_digest(d) {
                                Ok(d) => digests.push(d),
                                Err(msg) => c.push(
                                    ParseErrorKind::InvalidValue,
                                    line,
                                    format!("{}[{j}]", path("sha256")),
                                    msg,
                                ),
                            }
                        }
                        if raw.len() != urls.len() && !manual {
                            c.push(
                                ParseErrorKind::InvalidValue,
                                line,
                                path("sha256"),
                                format!("{} digests given for {} urls", raw.len(), urls.len()),
                            );
                        }
                        ChecksumSpec::enforce(digests)
                    }
                }
            }
        }
    };

    let post_fetch = match table.get("post_fetch") {
        None => PostFetchAction::None,
        Some(item) => {
            let line = line_of_key(c, "post_fetch");
            match item.as_str().and_then(PostFetchAction::from_name) {
                Some(a) => a,
                None => {
                    c.push(
                        ParseErrorKind::InvalidValue,
                        line,
                        path("post_fetch"),
                        "expected one of \"none\", \"unpack\", \"unpack-delete\"",
                    );
                    PostFetchAction::None
                }
            }
        }
    };

    let mut filenames: Vec<Option<String>> = vec![None; urls.len()];
    if let Some(item) = table.get("filename") {
        let line = line_of_key(c, "filename");
        match one_or_many(item) {
            None => c.push(
                ParseErrorKind::InvalidValue,
                line,
                path("filename"),
                "expected a string or an array of strings",
            ),
            Some(list) if list.len() != urls.len() => c.push(
                ParseErrorKind::InvalidValue,
                line,
                path("filename"),
                format!("{} filenames given for {} urls", list.len(), urls.len()),
            ),
            Some(list) => {
                let single = item.as_str().is_some();
                for (j, f) in list.into_iter().enumerate() {
                    // In arrays an empty string means "infer from the response".
                    if f.is_empty() && !single {
                        continue;
                    }
                    match check_filename(&f) {
                        Ok(()) => filenames[j] = Some(f),
                        Err(e) => c.push(
                            ParseErrorKind::InvalidValue,
                            line,
                            format!("{}[{j}]", path("filename")),
                            e,
                        ),
                    }
                }
            }
        }
    }

    let timeout_secs = match table.get("timeout_secs") {
        None => None,
        Some(item) => {
            let line = line_of_key(c, "timeout_secs");
            match item.as_integer() {
                Some(v) if v >= 1 => Some(v as u64),
                _ => {
                    c.push(
                        ParseErrorKind::InvalidValue,
                        line,
                        path("timeout_secs"),
                        "expected a positive integer",
                    );
                    None
                }
            }
        }
    };

    if c.issues.len() != before {
        return None;
    }
    let spec = DataDepSpec {
        name: name?,
        message: message?,
        provenance,
        remote_sources: urls
            .into_iter()
            .zip(filenames)
            .map(|(url, filename_override)| RemoteFile { url, filename_override })
            .collect(),
        checksum,
        post_fetch,
        kind: if manual { DepKind::Manual } else { DepKind::Managed },
        timeout_secs,
    };
    if let Err(v) = spec.validate() {
        c.push(
            ParseErrorKind::InvalidValue,
            header_line,
            format!("datadep[{index}]"),
            v.to_string(),
        );
        return None;
    }
    Some(spec)
}

fn string_list(item: &Item) -> Option<Vec<String>> {
    item.as_array()?.iter().map(|v| v.as_str().map(str::to_owned)).collect()
}

fn one_or_many(item: &Item) -> Option<Vec<String>> {
    match item.as_str() {
        Some(s) => Some(vec![s.to_owned()]),
        None => string_list(item),
    }
}

/// Accepts `<hex>` or `<algorithm>:<hex>`; only SHA-256 is supported.
fn parse_digest(raw: &str) -> Result<String, String> {
    let hex = match raw.split_once(':') {
        Some((algo, hex)) => {
            if ChecksumAlgorithm::from_name(algo).is_none() {
                return Err(format!(
                    "unsupported checksum algorithm {algo:?} (only sha256 is supported)"
                ));
            }
            hex
        }
        None => raw,
    };
    let lower = hex.to_ascii_lowercase();
    if is_sha256_hex(&lower) {
        Ok(lower)
    } else {
        Err(format!("{raw:?} is not a SHA-256 digest (64 hex characters)"))
    }
}

/// Renders a manifest in canonical form. Optional fields that are unset are
/// omitted; output is byte-identical for equal manifests.
pub fn write_manifest(manifest: &Manifest) -> String {
    let mut out = format!("version = {}\n", manifest.format_version);
    for spec in &manifest.deps {
        out.push_str("\n[[datadep]]\n");
        kv(&mut out, "name", &quote(&spec.name));
        kv(&mut out, "message", &quote(&spec.message));
        for (key, value) in [
            ("author", &spec.provenance.author),
            ("license", &spec.provenance.license),
            ("citation", &spec.provenance.citation),
            ("website", &spec.provenance.website),
        ] {
            if let Some(v) = value {
                kv(&mut out, key, &quote(v));
            }
        }
        if spec.kind == DepKind::Manual {
            kv(&mut out, "manual", "true");
        }
        if !spec.remote_sources.is_empty() {
            let urls: Vec<&str> = spec.remote_sources.iter().map(|r| r.url.as_str()).collect();
            kv(&mut out, "urls", &array(&urls));
        }
        if spec.remote_sources.iter().any(|r| r.filename_override.is_some()) {
            let names: Vec<&str> = spec
                .remote_sources
                .iter()
                .map(|r| r.filename_override.as_deref().unwrap_or(""))
                .collect();
            kv(&mut out, "filename", &one_or_array(&names));
        }
        match &spec.checksum.mode {
            ChecksumMode::Absent => {}
            ChecksumMode::Ignore => kv(&mut out, "sha256", "\"ignore\""),
            ChecksumMode::Enforce(digests) => {
                let d: Vec<&str> = digests.iter().map(String::as_str).collect();
                kv(&mut out, "sha256", &one_or_array(&d));
            }
        }
        if spec.post_fetch != PostFetchAction::None {
            kv(&mut out, "post_fetch", &quote(spec.post_fetch.as_str()));
        }
        if let Some(t) = spec.timeout_secs {
            kv(&mut out, "timeout_secs", &t.to_string());
        }
    }
    out
}

fn kv(out: &mut String, key: &str, value: &str) {
    out.push_str(key);
    out.push_str(" = ");
    out.push_str(value);
    out.push('\n');
}

fn one_or_array(items: &[&str]) -> String {
    match items {
        [one] => quote(one),
        many => array(many),
    }
}

fn array(items: &[&str]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("[{}]", quoted.join(", "))
}

/// A TOML basic string.
fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{:04X}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
