//! The `datadep` command line: resolve, fetch, list, status, verify, remove.
//!
//! Paths and reports go to the data stream (stdout); prompts, progress and
//! diagnostics go to stderr, so `DATA=$(datadep resolve MNIST)` composes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::acquire::checksum::sha256_file;
use crate::acquire::http::{infer_filename, HttpClient, ProbeResult, DEFAULT_TIMEOUT};
use crate::acquire::receipt::Receipt;
use crate::acquire::staging::STAGING_DIR;
use crate::acquire::{ResolveError, Resolver};
use crate::consent::PromptIo;
use crate::locate::{self, build_load_path, Env, Platform, SatisfiedBy};
use crate::manifest::{load_manifest, DEFAULT_MANIFEST};
use crate::registry::{validate_name, ChecksumMode, DataDepSpec, Registry};

/// Staging directories older than this are reaped by `remove --gc`.
pub const STALE_STAGING_AGE: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Failure,
    Usage,
    Declined,
    ChecksumMismatch,
    NotRegistered,
    DownloadsDisabled,
    ManualMissing,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Declined => 3,
            ExitStatus::ChecksumMismatch => 4,
            ExitStatus::NotRegistered => 5,
            ExitStatus::DownloadsDisabled => 6,
            ExitStatus::ManualMissing => 7,
        }
    }
}

impl From<&ResolveError> for ExitStatus {
    fn from(e: &ResolveError) -> Self {
        match e {
            ResolveError::NotRegistered(_) => ExitStatus::NotRegistered,
            ResolveError::ManualDataDepMissing { .. } => ExitStatus::ManualMissing,
            ResolveError::Declined { .. } => ExitStatus::Declined,
            ResolveError::ChecksumMismatch { .. } => ExitStatus::ChecksumMismatch,
            ResolveError::DownloadsDisabled { .. } => ExitStatus::DownloadsDisabled,
            ResolveError::DownloadFailed(_) | ResolveError::PostFetchFailed(_) | ResolveError::InstallFailed { .. } => {
                ExitStatus::Failure
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "datadep", version, about = "Fetch, verify and locate data dependencies")]
pub struct Cli {
    /// Manifest to read instead of ./DataDeps.toml
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the local path of a dependency, fetching it if needed
    Resolve { name: String },
    /// Fetch dependencies ahead of time
    Fetch(FetchArgs),
    /// List declared dependencies
    List {
        #[arg(long)]
        json: bool,
    },
    /// Show where each dependency is installed
    Status {
        #[arg(long)]
        json: bool,
    },
    /// Re-check stored archives, or with --remote check that source URLs still work
    Verify(VerifyArgs),
    /// Delete a fetched dependency from the store
    Remove(RemoveArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    pub names: Vec<String>,
    #[arg(long, conflicts_with = "names")]
    pub all: bool,
    /// Continue past failures and report them at the end
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub names: Vec<String>,
    #[arg(long, conflicts_with = "names")]
    pub all: bool,
    /// Probe source URLs instead of re-hashing local files
    #[arg(long)]
    pub remote: bool,
    /// Treat dependencies that were never fetched as failures
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RemoveArgs {
    #[arg(required_unless_present = "gc", conflicts_with = "gc")]
    pub name: Option<String>,
    /// Delete abandoned staging directories older than 24 hours
    #[arg(long)]
    pub gc: bool,
}

/// Process-level inputs, injectable for tests.
#[derive(Debug, Clone)]
pub struct Context {
    pub env: Env,
    pub working_dir: PathBuf,
    pub platform: Platform,
    pub show_progress: bool,
}

impl Context {
    pub fn from_process() -> std::io::Result<Self> {
        Ok(Self {
            env: Env::from_process(),
            working_dir: std::env::current_dir()?,
            platform: Platform::current(),
            show_progress: true,
        })
    }
}

struct Session<'a> {
    ctx: &'a Context,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! diag {
    ($s:expr, $($arg:tt)*) => {{
        let _ = writeln!($s.err, $($arg)*);
    }};
}

macro_rules! data {
    ($s:expr, $($arg:tt)*) => {{
        let _ = writeln!($s.out, $($arg)*);
    }};
}

pub fn run(cli: Cli, ctx: &Context, out: &mut dyn Write, err: &mut dyn Write, prompt: &mut dyn PromptIo) -> ExitStatus {
    let mut s = Session { ctx, out, err };
    if let Command::Remove(args) = &cli.command {
        return cmd_remove(&mut s, args);
    }
    let manifest_path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| ctx.working_dir.join(DEFAULT_MANIFEST));
    let manifest_path = if manifest_path.is_absolute() {
        manifest_path
    } else {
        ctx.working_dir.join(manifest_path)
    };
    let registry = match load_manifest(&manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|m| m.to_registry().map_err(|e| format!("{}: {e}", manifest_path.display())))
    {
        Ok(r) => r,
        Err(e) => {
            diag!(s, "datadep: error: {e}");
            return ExitStatus::Failure;
        }
    };
    let load_path = build_load_path(&ctx.env, ctx.platform, &ctx.working_dir);
    let resolver = Resolver::new(&registry, load_path, ctx.env.clone()).with_progress(ctx.show_progress);

    let status = match cli.command {
        Command::Resolve { name } => cmd_resolve(&mut s, &resolver, &name, prompt),
        Command::Fetch(args) => cmd_fetch(&mut s, &resolver, &args, prompt),
        Command::List { json } => cmd_list(&mut s, &registry, json),
        Command::Status { json } => cmd_status(&mut s, &resolver, json),
        Command::Verify(args) => cmd_verify(&mut s, &resolver, &args),
        Command::Remove(_) => unreachable!("handled above"),
    };
    let _ = s.out.flush();
    status
}

fn report_error(s: &mut Session<'_>, e: &ResolveError) -> ExitStatus {
    diag!(s, "datadep: error: {e}");
    if let ResolveError::Declined { .. } = e {
        diag!(
            s,
            "datadep: set {}=true to accept downloads non-interactively",
            crate::consent::ENV_ALWAYS_ACCEPT
        );
    }
    ExitStatus::from(e)
}

fn cmd_resolve(s: &mut Session<'_>, resolver: &Resolver<'_>, name: &str, prompt: &mut dyn PromptIo) -> ExitStatus {
    match resolver.resolve(name, prompt) {
        Ok(r) => {
            data!(s, "{}", r.path.display());
            ExitStatus::Success
        }
        Err(e) => report_error(s, &e),
    }
}

fn selected_names(s: &mut Session<'_>, registry: &Registry, names: &[String], all: bool) -> Option<Vec<String>> {
    if all {
        return Some(registry.names().map(str::to_owned).collect());
    }
    if names.is_empty() {
        diag!(s, "datadep: error: name one or more dependencies, or pass --all");
        return None;
    }
    Some(names.to_vec())
}

fn cmd_fetch(s: &mut Session<'_>, resolver: &Resolver<'_>, args: &FetchArgs, prompt: &mut dyn PromptIo) -> ExitStatus {
    let Some(names) = selected_names(s, resolver.registry(), &args.names, args.all) else {
        return ExitStatus::Usage;
    };
    let mut first_failure = None;
    let mut failed = 0usize;
    for name in &names {
        match resolver.resolve(name, prompt) {
            Ok(r) => data!(s, "{}", r.path.display()),
            Err(e) => {
                let status = report_error(s, &e);
                failed += 1;
                first_failure.get_or_insert(status);
                if !args.keep_going {
                    break;
                }
            }
        }
    }
    if failed > 0 && args.keep_going {
        diag!(s, "datadep: {failed} of {} dependencies failed", names.len());
    }
    first_failure.unwrap_or(ExitStatus::Success)
}

fn cmd_list(s: &mut Session<'_>, registry: &Registry, json: bool) -> ExitStatus {
    if !json && !registry.is_empty() {
        data!(s, "{:<32} {:<8} {}", "NAME", "KIND", "SOURCES");
    }
    for spec in registry.iter() {
        if json {
            data!(
                s,
                "{}",
                json!({"name": spec.name, "kind": spec.kind.as_str(), "sources": spec.remote_sources.len()})
            );
        } else {
            data!(
                s,
                "{:<32} {:<8} {}",
                spec.name,
                spec.kind.as_str(),
                spec.remote_sources.len()
            );
        }
    }
    ExitStatus::Success
}

fn cmd_status(s: &mut Session<'_>, resolver: &Resolver<'_>, json: bool) -> ExitStatus {
    let registry = resolver.registry();
    if !json && !registry.is_empty() {
        data!(s, "{:<32} {:<12} {}", "NAME", "STATE", "DETAIL");
    }
    for spec in registry.iter() {
        let found = locate::search(resolver.load_path(), &spec.name);
        match (found, spec.is_manual()) {
            (Some(r), _) => {
                let origin = match r.satisfied_by {
                    SatisfiedBy::FoundLocal(o) => o.as_str(),
                    SatisfiedBy::Fetched => "fetched",
                };
                if json {
                    data!(
                        s,
                        "{}",
                        json!({"name": spec.name, "state": "found", "origin": origin, "path": r.path})
                    );
                } else {
                    data!(s, "{:<32} {:<12} {} ({origin})", spec.name, "found", r.path.display());
                }
            }
            (None, false) => {
                if json {
                    data!(s, "{}", json!({"name": spec.name, "state": "not-fetched"}));
                } else {
                    data!(s, "{:<32} {:<12} -", spec.name, "not-fetched");
                }
            }
            (None, true) => {
                let locations: Vec<PathBuf> = resolver.load_path().candidates(&spec.name).map(|(p, _)| p).collect();
                if json {
                    data!(
                        s,
                        "{}",
                        json!({"name": spec.name, "state": "manual", "locations": locations})
                    );
                } else {
                    let joined: Vec<String> = locations.iter().map(|p| p.display().to_string()).collect();
                    data!(
                        s,
                        "{:<32} {:<12} install manually into one of: {}",
                        spec.name,
                        "manual",
                        joined.join(", ")
                    );
                }
            }
        }
    }
    ExitStatus::Success
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum FileCheck {
    Ok,
    Mismatch {
        expected: String,
        computed: String,
    },
    Missing,
    /// Archive deleted after extraction; only the fetch-time check applies.
    AtFetchOnly,
}

#[derive(Debug)]
enum DepCheck {
    NotFetched,
    Manual,
    NoReceipt,
    Files(Vec<(String, FileCheck)>),
}

fn check_local(spec: &DataDepSpec, dir: &Path) -> Result<DepCheck, String> {
    if spec.is_manual() {
        return Ok(DepCheck::Manual);
    }
    let expected: Option<&[String]> = match &spec.checksum.mode {
        ChecksumMode::Enforce(d) => Some(d),
        _ => None,
    };
    let receipt = Receipt::read(dir).map_err(|e| format!("unreadable receipt: {e}"))?;
    let files: Vec<(String, Option<String>, bool)> = match receipt {
        Some(r) => r
            .files
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let want = expected
                    .filter(|d| d.len() == spec.remote_sources.len())
                    .and_then(|d| d.get(i).cloned())
                    .unwrap_or(f.sha256);
                (f.filename, Some(want), f.retained)
            })
            .collect(),
        None => match expected {
            Some(digests) => spec
                .remote_sources
                .iter()
                .zip(digests)
                .map(|(r, d)| {
                    let name = r
                        .filename_override
                        .clone()
                        .unwrap_or_else(|| infer_filename(&r.url, None));
                    (name, Some(d.clone()), true)
                })
                .collect(),
            None => return Ok(DepCheck::NoReceipt),
        },
    };
    let mut out = Vec::with_capacity(files.len());
    for (filename, want, retained) in files {
        let path = dir.join(&filename);
        let check = if !retained {
            FileCheck::AtFetchOnly
        } else if !path.is_file() {
            FileCheck::Missing
        } else {
            let (computed, _) = sha256_file(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            match want {
                Some(w) if !w.eq_ignore_ascii_case(&computed) => FileCheck::Mismatch { expected: w, computed },
                _ => FileCheck::Ok,
            }
        };
        out.push((filename, check));
    }
    Ok(DepCheck::Files(out))
}

fn cmd_verify(s: &mut Session<'_>, resolver: &Resolver<'_>, args: &VerifyArgs) -> ExitStatus {
    let registry = resolver.registry();
    let Some(names) = selected_names(s, registry, &args.names, args.all) else {
        return ExitStatus::Usage;
    };
    let mut specs = Vec::with_capacity(names.len());
    for name in &names {
        match registry.lookup(name) {
            Ok(spec) => specs.push(spec),
            Err(e) => {
                diag!(s, "datadep: error: {e}");
                return ExitStatus::NotRegistered;
            }
        }
    }
    if args.remote {
        verify_remote(s, &specs, args.json)
    } else {
        verify_local(s, resolver, &specs, args)
    }
}

fn verify_local(s: &mut Session<'_>, resolver: &Resolver<'_>, specs: &[&DataDepSpec], args: &VerifyArgs) -> ExitStatus {
    let mut mismatch = false;
    let mut other_failure = false;
    for spec in specs {
        let check = match locate::search(resolver.load_path(), &spec.name) {
            None => Ok(DepCheck::NotFetched),
            Some(r) => check_local(spec, &r.path),
        };
        let (status, detail): (&str, String) = match &check {
            Err(e) => {
                other_failure = true;
                ("failed", e.clone())
            }
            Ok(DepCheck::NotFetched) => {
                other_failure |= args.strict;
                ("not-fetched", String::new())
            }
            Ok(DepCheck::Manual) => ("ok", "manual dependency; nothing to verify".into()),
            Ok(DepCheck::NoReceipt) => (
                "verified-at-fetch-only",
                "no checksum declared and no fetch receipt".into(),
            ),
            Ok(DepCheck::Files(files)) => {
                let mut parts = Vec::new();
                let mut failed = false;
                let mut at_fetch_only = false;
                for (name, c) in files {
                    match c {
                        FileCheck::Ok => parts.push(format!("{name}: ok")),
                        FileCheck::Mismatch { expected, computed } => {
                            failed = true;
                            mismatch = true;
                            parts.push(format!("{name}: expected {expected}, computed {computed}"));
                        }
                        FileCheck::Missing => {
                            failed = true;
                            other_failure = true;
                            parts.push(format!("{name}: missing"));
                        }
                        FileCheck::AtFetchOnly => {
                            at_fetch_only = true;
                            parts.push(format!(
                                "{name}: archive deleted after unpacking, verified at fetch only"
                            ));
                        }
                    }
                }
                let status = if failed {
                    "failed"
                } else if at_fetch_only {
                    "verified-at-fetch-only"
                } else {
                    "ok"
                };
                (status, parts.join("; "))
            }
        };
        if args.json {
            data!(s, "{}", json!({"name": spec.name, "status": status, "detail": detail}));
        } else {
            let label = status.to_uppercase();
            if detail.is_empty() {
                data!(s, "{label:<22} {}", spec.name);
            } else {
                data!(s, "{label:<22} {}  {detail}", spec.name);
            }
        }
    }
    if mismatch {
        ExitStatus::ChecksumMismatch
    } else if other_failure {
        ExitStatus::Failure
    } else {
        ExitStatus::Success
    }
}

fn verify_remote(s: &mut Session<'_>, specs: &[&DataDepSpec], json: bool) -> ExitStatus {
    let jobs: Vec<(&str, &str, Duration)> = specs
        .iter()
        .flat_map(|spec| {
            let timeout = spec.timeout_secs.map(Duration::from_secs).unwrap_or(DEFAULT_TIMEOUT);
            spec.remote_sources
                .iter()
                .map(move |r| (spec.name.as_str(), r.url.as_str(), timeout))
        })
        .collect();
    let results: Vec<ProbeResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(_, url, timeout)| scope.spawn(move || HttpClient::new(timeout).probe(url)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| {
                    ProbeResult::Decayed(crate::acquire::http::DownloadCause::Transport("probe panicked".into()))
                })
            })
            .collect()
    });
    let mut decayed = 0usize;
    for ((name, url, _), result) in jobs.iter().zip(results) {
        let (status, detail) = match result {
            ProbeResult::Available(code) => ("ok", code.to_string()),
            ProbeResult::Decayed(cause) => {
                decayed += 1;
                ("decayed", cause.to_string())
            }
        };
        if json {
            data!(
                s,
                "{}",
                json!({"name": name, "url": url, "status": status, "detail": detail})
            );
        } else {
            data!(s, "{:<8} {name}  {url}  ({detail})", status.to_uppercase());
        }
    }
    if decayed > 0 {
        diag!(s, "datadep: {decayed} of {} source URLs are unavailable", jobs.len());
        ExitStatus::Failure
    } else {
        ExitStatus::Success
    }
}

fn cmd_remove(s: &mut Session<'_>, args: &RemoveArgs) -> ExitStatus {
    let ctx = s.ctx;
    let load_path = build_load_path(&ctx.env, ctx.platform, &ctx.working_dir);
    let Some(store) = locate::store_candidates(&load_path, &ctx.env).into_iter().next() else {
        diag!(s, "datadep: error: no store directory could be determined");
        return ExitStatus::Failure;
    };
    if args.gc {
        return gc_staging(s, &store);
    }
    let name = args.name.as_deref().unwrap_or_default();
    if let Err(e) = validate_name(name) {
        diag!(s, "datadep: error: refusing to remove {name:?}: {e}");
        return ExitStatus::Failure;
    }
    let target = store.join(name);
    let mut status = ExitStatus::Success;
    let removed = match fs::symlink_metadata(&target) {
        Ok(_) => match fs::remove_dir_all(&target).or_else(|_| fs::remove_file(&target)) {
            Ok(()) => {
                diag!(s, "datadep: removed {}", target.display());
                true
            }
            Err(e) => {
                diag!(s, "datadep: error: cannot remove {}: {e}", target.display());
                return ExitStatus::Failure;
            }
        },
        Err(_) => false,
    };
    let mut extended = load_path.clone();
    if !extended.contains_dir(&store) {
        extended.push(store.clone(), locate::Origin::Env);
    }
    let others: Vec<PathBuf> = extended
        .candidates(name)
        .filter(|(p, _)| *p != target && p.is_dir() && locate::is_populated_dir(p))
        .map(|(p, _)| p)
        .collect();
    for other in &others {
        diag!(
            s,
            "datadep: {name} is also present at {} (outside the store; not removed)",
            other.display()
        );
    }
    if !removed {
        if others.is_empty() {
            diag!(s, "datadep: {name} is not present in the store");
        } else {
            status = ExitStatus::Failure;
        }
    }
    status
}

fn gc_staging(s: &mut Session<'_>, store: &Path) -> ExitStatus {
    let staging = store.join(STAGING_DIR);
    let entries = match fs::read_dir(&staging) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            diag!(s, "datadep: nothing to clean");
            return ExitStatus::Success;
        }
        Err(e) => {
            diag!(s, "datadep: error: cannot read {}: {e}", staging.display());
            return ExitStatus::Failure;
        }
    };
    let now = SystemTime::now();
    let mut removed = 0usize;
    let mut status = ExitStatus::Success;
    for entry in entries.flatten() {
        let path = entry.path();
        let stale = entry
            .metadata()
            .and_then(|m| m.modified())
            .ok()
            .and_then(|t| now.duration_since(t).ok())
            .is_some_and(|age| age >= STALE_STAGING_AGE);
        if !stale {
            continue;
        }
        let result = if path.is_dir() {
            fs::remove_dir_all(&path)
        } else {
            fs::remove_file(&path)
        };
        match result {
            Ok(()) => removed += 1,
            Err(e) => {
                diag!(s, "datadep: error: cannot remove {}: {e}", path.display());
                status = ExitStatus::Failure;
            }
        }
    }
    diag!(
        s,
        "datadep: removed {removed} stale staging entr{}",
        if removed == 1 { "y" } else { "ies" }
    );
    status
}
