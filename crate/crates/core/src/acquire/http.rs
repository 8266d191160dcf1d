//! HTTP fetching: filename inference, streamed downloads and URL probes.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, IsTerminal, Read, Write};
use std::path::PathBuf;
use std::time::Duration;

use percent_encoding::percent_decode_str;
use thiserror::Error;
use url::Url;

use super::staging::StagingArea;
use crate::registry::RemoteFile;

pub const USER_AGENT: &str = concat!("datadep/", env!("CARGO_PKG_VERSION"));
pub const MAX_REDIRECTS: u32 = 10;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);

/// Name reserved inside every installed dependency for the fetch receipt.
pub const RECEIPT_NAME: &str = ".datadep.json";

const FALLBACK_NAME: &str = "download";

/// Picks a local filename for a download.
///
/// Precedence: the Content-Disposition `filename*`/`filename` parameter,
/// then the last non-empty URL path segment (percent-decoded), then
/// `"download"`. The result never contains path separators or NUL and
/// never starts with a dot.
pub fn infer_filename(url: &str, content_disposition: Option<&str>) -> String {
    let from_header = content_disposition.and_then(disposition_filename);
    let from_url = || {
        let parsed = Url::parse(url).ok()?;
        let segment = parsed.path_segments()?.rev().find(|s| !s.is_empty())?;
        Some(percent_decode_str(segment).decode_utf8_lossy().into_owned())
    };
    let raw = from_header.or_else(from_url).unwrap_or_default();
    sanitize_filename(&raw)
}

pub fn sanitize_filename(raw: &str) -> String {
    let replaced: String = raw
        .chars()
        .map(|c| if matches!(c, '/' | '\\' | '\0') { '_' } else { c })
        .collect();
    let trimmed = replaced.trim_start_matches('.');
    if trimmed.is_empty() {
        FALLBACK_NAME.to_owned()
    } else {
        trimmed.to_owned()
    }
}

/// Extracts the filename from a Content-Disposition value. The extended
/// `filename*` form wins over plain `filename`.
fn disposition_filename(header: &str) -> Option<String> {
    let params = split_params(header);
    let extended = params
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("filename*"))
        .and_then(|(_, v)| decode_ext_value(v));
    extended
        .or_else(|| {
            params
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("filename"))
                .map(|(_, v)| v.clone())
        })
        .filter(|v| !v.is_empty())
}

/// Splits `type; k=v; k="quoted; value"` into unquoted key/value pairs.
fn split_params(header: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = header.chars().peekable();
    // Skip the disposition type.
    for c in chars.by_ref() {
        if c == ';' {
            break;
        }
    }
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace() || *c == ';') {
            chars.next();
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c == ';' {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek().is_none() && key.trim().is_empty() {
            break;
        }
        let mut value = String::new();
        if chars.peek() == Some(&'=') {
            chars.next();
            while chars.peek().is_some_and(|c| *c == ' ' || *c == '\t') {
                chars.next();
            }
            if chars.peek() == Some(&'"') {
                chars.next();
                while let Some(c) = chars.next() {
                    match c {
                        '"' => break,
                        '\\' => {
                            if let Some(escaped) = chars.next() {
                                value.push(escaped);
                            }
                        }
                        c => value.push(c),
                    }
                }
                while chars.peek().is_some_and(|c| *c != ';') {
                    chars.next();
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c == ';' {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
                value = value.trim_end().to_owned();
            }
        }
        out.push((key.trim().to_owned(), value));
        if chars.peek().is_none() {
            break;
        }
    }
    out
}

/// Decodes an RFC 5987 `charset'lang'pct-encoded` value.
fn decode_ext_value(value: &str) -> Option<String> {
    let mut parts = value.splitn(3, '\'');
    let charset = parts.next()?;
    let _lang = parts.next()?;
    let encoded = parts.next()?;
    let bytes: Vec<u8> = percent_decode_str(encoded).collect();
    if charset.eq_ignore_ascii_case("utf-8") {
        String::from_utf8(bytes).ok()
    } else {
        // ISO-8859-1 maps bytes directly onto code points.
        Some(bytes.into_iter().map(char::from).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DownloadCause {
    Status(u16),
    Io(String),
    TooManyRedirects,
    Timeout,
    Transport(String),
    /// Two sources of one dependency map to the same local filename.
    FilenameClash(String),
}

impl fmt::Display for DownloadCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DownloadCause::Status(code) => write!(f, "HTTP status {code}"),
            DownloadCause::Io(e) => write!(f, "I/O error: {e}"),
            DownloadCause::TooManyRedirects => write!(f, "more than {MAX_REDIRECTS} redirects"),
            DownloadCause::Timeout => write!(f, "timed out"),
            DownloadCause::Transport(e) => write!(f, "{e}"),
            DownloadCause::FilenameClash(name) => write!(f, "local filename {name:?} is already taken"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("download of {url} failed: {cause}")]
pub struct DownloadError {
    pub url: String,
    pub cause: DownloadCause,
}

/// Blocking HTTP client with the redirect and timeout policy applied.
#[derive(Debug, Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    show_progress: bool,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

impl HttpClient {
    /// `timeout` bounds connection setup plus each read and write; a
    /// transfer that keeps making progress is never cut off.
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .redirects(MAX_REDIRECTS)
            .timeout_connect(CONNECT_TIMEOUT.min(timeout))
            .timeout_read(timeout)
            .timeout_write(timeout)
            .user_agent(USER_AGENT)
            .build();
        Self {
            agent,
            show_progress: false,
        }
    }

    /// Enables byte-count progress on stderr when stderr is a terminal.
    pub fn with_progress(mut self, enabled: bool) -> Self {
        self.show_progress = enabled && io::stderr().is_terminal();
        self
    }

    fn get(&self, url: &str) -> Result<ureq::Response, DownloadError> {
        self.agent.get(url).call().map_err(|e| classify(url, e))
    }

    /// Checks whether `url` is still served, without downloading the body.
    ///
    /// Sends HEAD and falls back to a one-byte ranged GET when HEAD is
    /// rejected with a 4xx/5xx status.
    pub fn probe(&self, url: &str) -> ProbeResult {
        let head = self.agent.head(url).call();
        let first = match head {
            Ok(resp) => return ProbeResult::Available(resp.status()),
            Err(e) => classify(url, e),
        };
        if !matches!(first.cause, DownloadCause::Status(_)) {
            return ProbeResult::Decayed(first.cause);
        }
        match self.agent.get(url).set("Range", "bytes=0-0").call() {
            Ok(resp) => {
                // Drain at most a small body so the connection can be reused.
                let _ = io::copy(&mut resp.into_reader().take(64 * 1024), &mut io::sink());
                ProbeResult::Available(200)
            }
            Err(e) => ProbeResult::Decayed(classify(url, e).cause),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeResult {
    Available(u16),
    Decayed(DownloadCause),
}

fn classify(url: &str, err: ureq::Error) -> DownloadError {
    let cause = match err {
        ureq::Error::Status(code, _) => DownloadCause::Status(code),
        ureq::Error::Transport(t) => {
            if t.kind() == ureq::ErrorKind::TooManyRedirects {
                DownloadCause::TooManyRedirects
            } else if is_timeout(&t) {
                DownloadCause::Timeout
            } else {
                DownloadCause::Transport(t.to_string())
            }
        }
    };
    DownloadError {
        url: url.to_owned(),
        cause,
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    t.to_string().contains("timed out")
}

fn io_cause(e: &io::Error) -> DownloadCause {
    if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
        DownloadCause::Timeout
    } else {
        DownloadCause::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownloadedFile {
    pub path: PathBuf,
    pub filename: String,
    pub bytes: u64,
}

/// Downloads `remote` into the staging root.
///
/// The body is written to `<filename>.part` and renamed once complete.
/// `taken` lists filenames other sources of the same dependency already use.
pub fn download(
    remote: &RemoteFile,
    staging: &StagingArea,
    client: &HttpClient,
    taken: &[String],
) -> Result<DownloadedFile, DownloadError> {
    let url = remote.url.as_str();
    let fail = |cause| DownloadError {
        url: url.to_owned(),
        cause,
    };
    let response = client.get(url)?;
    let filename = match &remote.filename_override {
        Some(name) => name.clone(),
        None => infer_filename(url, response.header("Content-Disposition")),
    };
    if filename == RECEIPT_NAME || taken.contains(&filename) {
        return Err(fail(DownloadCause::FilenameClash(filename)));
    }
    let total: Option<u64> = response.header("Content-Length").and_then(|v| v.parse().ok());
    let final_path = staging.root().join(&filename);
    let part_path = staging.root().join(format!("{filename}.part"));

    let file = File::create(&part_path).map_err(|e| fail(DownloadCause::Io(e.to_string())))?;
    let mut writer = BufWriter::with_capacity(256 * 1024, file);
    let mut reader = response.into_reader();
    let mut buf = vec![0u8; 64 * 1024];
    let mut bytes = 0u64;
    let mut progress = Progress::new(client.show_progress, &filename, total);
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(fail(io_cause(&e))),
        };
        writer
            .write_all(&buf[..n])
            .map_err(|e| fail(DownloadCause::Io(e.to_string())))?;
        bytes += n as u64;
        progress.update(bytes);
    }
    progress.finish();
    if let Some(expected) = total {
        if bytes != expected {
            return Err(fail(DownloadCause::Io(format!(
                "connection closed after {bytes} of {expected} bytes"
            ))));
        }
    }
    let file = writer
        .into_inner()
        .map_err(|e| fail(DownloadCause::Io(e.error().to_string())))?;
    file.sync_all().map_err(|e| fail(DownloadCause::Io(e.to_string())))?;
    drop(file);
    fs::rename(&part_path, &final_path).map_err(|e| fail(DownloadCause::Io(e.to_string())))?;
    Ok(DownloadedFile {
        path: final_path,
        filename,
        bytes,
    })
}

struct Progress<'a> {
    enabled: bool,
    name: &'a str,
    total: Option<u64>,
    last_shown: u64,
}

impl<'a> Progress<'a> {
    fn new(enabled: bool, name: &'a str, total: Option<u64>) -> Self {
        Self {
            enabled,
            name,
            total,
            last_shown: 0,
        }
    }

    fn update(&mut self, bytes: u64) {
        if !self.enabled || bytes - self.last_shown < 256 * 1024 {
            return;
        }
        self.last_shown = bytes;
        let mut err = io::stderr().lock();
        let _ = match self.total {
            Some(t) => write!(err, "\r{}: {bytes}/{t} bytes", self.name),
            None => write!(err, "\r{}: {bytes} bytes", self.name),
        };
        let _ = err.flush();
    }

    fn finish(&self) {
        if self.enabled && self.last_shown > 0 {
            eprintln!();
        }
    }
}
