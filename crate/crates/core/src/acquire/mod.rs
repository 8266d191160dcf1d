//! The fetch pipeline run when a dependency is not found locally:
//! prompt, download, checksum (with one retry), post-fetch, atomic install.

pub mod checksum;
pub mod http;
pub mod receipt;
pub mod staging;
pub mod unpack;

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::consent::{self, AcceptPolicy, Answer, PromptIo};
use crate::locate::{self, Env, LoadPath, Origin, Resolution, SatisfiedBy};
use crate::registry::{ChecksumMode, DataDepSpec, NotRegistered, Registry};

use self::checksum::{verify_checksum, ChecksumOutcome};
use self::http::{download, DownloadError, HttpClient};
use self::receipt::Receipt;
use self::staging::{install, InstallOutcome, StagingArea};
use self::unpack::{post_fetch, PostFetchError};

pub const ENV_DISABLE_DOWNLOAD: &str = "DATADEP_DISABLE_DOWNLOAD";

/// Downloads per file under Enforce: the first attempt plus one retry.
pub const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedFile {
    pub url: String,
    pub filename: String,
    pub bytes: u64,
    pub sha256: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FetchReport {
    pub files: Vec<FetchedFile>,
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error(transparent)]
    NotRegistered(#[from] NotRegistered),
    #[error(
        "{name} is a manual data dependency and was not found.\n{message}\nPlace it in one of:\n{}",
        format_locations(.locations)
    )]
    ManualDataDepMissing {
        name: String,
        message: String,
        locations: Vec<PathBuf>,
    },
    #[error("download of {name} was declined")]
    Declined { name: String },
    #[error(transparent)]
    DownloadFailed(#[from] DownloadError),
    #[error("checksum mismatch for {file}: expected {expected}, got {computed}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        computed: String,
    },
    #[error(transparent)]
    PostFetchFailed(#[from] PostFetchError),
    #[error("install failed: {cause}")]
    InstallFailed { cause: String },
    #[error("{name} is not available locally and downloads are disabled ({ENV_DISABLE_DOWNLOAD} is set)")]
    DownloadsDisabled { name: String },
}

fn format_locations(locations: &[PathBuf]) -> String {
    locations
        .iter()
        .map(|p| format!("  {}", p.display()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Resolves `name` to a local directory, fetching it if necessary.
pub fn resolve(
    registry: &Registry,
    name: &str,
    load_path: &LoadPath,
    env: &Env,
    prompt_io: &mut dyn PromptIo,
) -> Result<Resolution, ResolveError> {
    Resolver::new(registry, load_path.clone(), env.clone()).resolve(name, prompt_io)
}

/// Resolution context shared across calls.
#[derive(Debug, Clone)]
pub struct Resolver<'r> {
    registry: &'r Registry,
    load_path: LoadPath,
    env: Env,
    policy: AcceptPolicy,
    show_progress: bool,
}

impl<'r> Resolver<'r> {
    /// If `DATADEP_STORE` points outside the load path it is appended, so
    /// freshly installed dependencies are found again on the next call.
    pub fn new(registry: &'r Registry, mut load_path: LoadPath, env: Env) -> Self {
        if let Some(store) = env.get_nonempty(locate::ENV_STORE) {
            let store = std::path::absolute(store).unwrap_or_else(|_| PathBuf::from(store));
            if !load_path.contains_dir(&store) {
                load_path.push(store, Origin::Env);
            }
        }
        let policy = AcceptPolicy::from_env(&env);
        Self {
            registry,
            load_path,
            env,
            policy,
            show_progress: false,
        }
    }

    pub fn with_progress(mut self, enabled: bool) -> Self {
        self.show_progress = enabled;
        self
    }

    pub fn load_path(&self) -> &LoadPath {
        &self.load_path
    }

    pub fn registry(&self) -> &Registry {
        self.registry
    }

    pub fn downloads_disabled(&self) -> bool {
        self.env.contains(ENV_DISABLE_DOWNLOAD)
    }

    pub fn resolve(&self, name: &str, io: &mut dyn PromptIo) -> Result<Resolution, ResolveError> {
        self.resolve_detailed(name, io).map(|(r, _)| r)
    }

    /// Like [`Resolver::resolve`] but also returns the fetch report when a
    /// download happened.
    pub fn resolve_detailed(
        &self,
        name: &str,
        io: &mut dyn PromptIo,
    ) -> Result<(Resolution, Option<FetchReport>), ResolveError> {
        if let Some(found) = locate::search(&self.load_path, name) {
            return Ok((found, None));
        }
        let spec = self.registry.lookup(name)?;
        if spec.is_manual() {
            return Err(ResolveError::ManualDataDepMissing {
                name: spec.name.clone(),
                message: spec.display_message(),
                locations: self.load_path.candidates(&spec.name).map(|(p, _)| p).collect(),
            });
        }
        if self.downloads_disabled() {
            return Err(ResolveError::DownloadsDisabled {
                name: spec.name.clone(),
            });
        }

        let dest = locate::store_candidates(&self.load_path, &self.env)
            .into_iter()
            .next()
            .map(|store| store.join(&spec.name))
            .ok_or_else(|| ResolveError::InstallFailed {
                cause: "no store directory could be determined (set DATADEP_STORE)".into(),
            })?;
        let prompt = consent::render_prompt(spec, &dest, None);
        if consent::ask(io, self.policy, &prompt) == Answer::Decline {
            return Err(ResolveError::Declined {
                name: spec.name.clone(),
            });
        }

        let store = locate::store_dir(&self.load_path, &self.env)
            .map_err(|e| ResolveError::InstallFailed { cause: e.to_string() })?;
        let (path, report) = fetch_into_store(spec, &store, &self.client_for(spec))?;
        Ok((
            Resolution {
                path,
                satisfied_by: SatisfiedBy::Fetched,
            },
            Some(report),
        ))
    }

    fn client_for(&self, spec: &DataDepSpec) -> HttpClient {
        let timeout = spec
            .timeout_secs
            .map(Duration::from_secs)
            .unwrap_or(http::DEFAULT_TIMEOUT);
        HttpClient::new(timeout).with_progress(self.show_progress)
    }
}

/// Runs download → checksum → post-fetch → install for a managed dependency,
/// returning the final directory. No consent is asked here.
pub fn fetch_into_store(
    spec: &DataDepSpec,
    store: &Path,
    client: &HttpClient,
) -> Result<(PathBuf, FetchReport), ResolveError> {
    let install_failed = |cause: String| ResolveError::InstallFailed { cause };
    let mut staging = StagingArea::create(store, &spec.name).map_err(|e| install_failed(e.to_string()))?;

    let mut fetched: Vec<FetchedFile> = Vec::with_capacity(spec.remote_sources.len());
    for remote in &spec.remote_sources {
        log::info!("downloading {}", remote.url);
        let taken: Vec<String> = fetched.iter().map(|f| f.filename.clone()).collect();
        let file = download(remote, &staging, client, &taken)?;
        staging.files.push(file.path);
        fetched.push(FetchedFile {
            url: remote.url.clone(),
            filename: file.filename,
            bytes: file.bytes,
            sha256: String::new(),
            attempts: 1,
        });
    }

    let mut outcome = verify(spec, &staging)?;
    if let ChecksumOutcome::Fail(report) = &outcome {
        let failing: Vec<usize> = report.mismatches().map(|(i, _)| i).collect();
        for i in failing {
            let remote = &spec.remote_sources[i];
            log::warn!("checksum mismatch for {}; downloading it again", fetched[i].filename);
            std::fs::remove_file(&staging.files[i]).map_err(|e| install_failed(e.to_string()))?;
            let taken: Vec<String> = fetched
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, f)| f.filename.clone())
                .collect();
            let file = download(remote, &staging, client, &taken)?;
            staging.files[i] = file.path;
            fetched[i].filename = file.filename;
            fetched[i].bytes = file.bytes;
            fetched[i].attempts = MAX_ATTEMPTS;
        }
        outcome = verify(spec, &staging)?;
    }
    for (f, digest) in fetched.iter_mut().zip(&outcome.report().files) {
        f.sha256 = digest.computed.clone();
    }
    match &outcome {
        ChecksumOutcome::Pass(_) => {}
        ChecksumOutcome::Fail(report) => {
            let (i, bad) = report.mismatches().next().expect("failed outcome has a mismatch");
            return Err(ResolveError::ChecksumMismatch {
                file: fetched[i].filename.clone(),
                expected: bad.expected.clone().unwrap_or_default(),
                computed: bad.computed.clone(),
            });
        }
        ChecksumOutcome::Warned(_) => warn_unverified(spec, &fetched),
    }

    let deleted = post_fetch(spec.post_fetch, &staging)?;

    let receipt = Receipt::new(spec, &fetched, &deleted);
    receipt
        .write(staging.root())
        .map_err(|e| install_failed(e.to_string()))?;

    let final_dir = store.join(&spec.name);
    match install(staging, &final_dir).map_err(|e| install_failed(e.to_string()))? {
        InstallOutcome::Installed => log::info!("installed {}", final_dir.display()),
        InstallOutcome::LostRace => {
            log::info!(
                "{} was installed concurrently; using the existing copy",
                final_dir.display()
            )
        }
    }
    Ok((final_dir, FetchReport { files: fetched }))
}

fn verify(spec: &DataDepSpec, staging: &StagingArea) -> Result<ChecksumOutcome, ResolveError> {
    verify_checksum(&spec.checksum, &staging.files).map_err(|e| ResolveError::InstallFailed { cause: e.to_string() })
}

fn warn_unverified(spec: &DataDepSpec, fetched: &[FetchedFile]) {
    for f in fetched {
        log::warn!("{}: {} has sha256 {} (not verified)", spec.name, f.filename, f.sha256);
    }
    if spec.checksum.mode == ChecksumMode::Absent {
        log::warn!(
            "{} declares no checksum. To pin this download, add to its [[datadep]] entry:\n{}",
            spec.name,
            suggested_sha256_line(fetched)
        );
    }
}

/// A manifest line pinning the given digests.
pub fn suggested_sha256_line(fetched: &[FetchedFile]) -> String {
    match fetched {
        [one] => format!("sha256 = \"{}\"", one.sha256),
        many => {
            let items: Vec<String> = many.iter().map(|f| format!("\"{}\"", f.sha256)).collect();
            format!("sha256 = [{}]", items.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suggestion_shapes() {
        let f = |d: &str| FetchedFile {
            url: String::new(),
            filename: String::new(),
            bytes: 0,
            sha256: d.into(),
            attempts: 1,
        };
        assert_eq!(suggested_sha256_line(&[f("aa")]), "sha256 = \"aa\"");
        assert_eq!(suggested_sha256_line(&[f("aa"), f("bb")]), "sha256 = [\"aa\", \"bb\"]");
    }

    #[test]
    fn manual_missing_lists_locations() {
        let reg = Registry::new()
            .register(DataDepSpec::manual("Private", "Ask the lab for access."))
            .unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let mut lp = LoadPath::default();
        lp.push(tmp.path().join("a"), Origin::Env);
        lp.push(tmp.path().join("b"), Origin::UserStore);
        let mut io = consent::ScriptedPromptIo::answering(["y"]);
        let err = resolve(&reg, "Private", &lp, &Env::new(), &mut io).unwrap_err();
        let ResolveError::ManualDataDepMissing { message, locations, .. } = &err else {
            panic!("{err:?}")
        };
        assert_eq!(message, "Ask the lab for access.");
        assert_eq!(
            locations,
            &vec![tmp.path().join("a/Private"), tmp.path().join("b/Private")]
        );
        assert!(io.prompts.is_empty());
        assert!(err.to_string().contains("b/Private"));
    }

    #[test]
    fn unregistered_and_disabled() {
        let reg = Registry::new()
            .register(DataDepSpec::managed(
                "MNIST",
                "",
                vec![crate::registry::RemoteFile::new("http://127.0.0.1:9/x")],
            ))
            .unwrap();
        let lp = LoadPath::default();
        let mut io = consent::ScriptedPromptIo::answering(["y"]);
        let err = resolve(&reg, "MNIST ", &lp, &Env::new(), &mut io).unwrap_err();
        assert!(
            matches!(err, ResolveError::NotRegistered(NotRegistered { ref suggestion, .. }) if suggestion.as_deref() == Some("MNIST"))
        );

        let env = Env::new().with(ENV_DISABLE_DOWNLOAD, "1");
        let err = resolve(&reg, "MNIST", &lp, &env, &mut io).unwrap_err();
        assert!(matches!(err, ResolveError::DownloadsDisabled { .. }));
        assert!(io.prompts.is_empty());
    }

    #[test]
    fn found_locally_without_registration() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(tmp.path().join("X")).unwrap();
        std::fs::write(tmp.path().join("X/f"), b"1").unwrap();
        let mut lp = LoadPath::default();
        lp.push(tmp.path(), Origin::WorkingDir);
        let mut io = consent::ScriptedPromptIo::non_interactive();
        let r = resolve(&Registry::new(), "X", &lp, &Env::new(), &mut io).unwrap();
        assert_eq!(r.satisfied_by, SatisfiedBy::FoundLocal(Origin::WorkingDir));
    }
}
