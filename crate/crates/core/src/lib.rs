//! Data-dependency management for research code.
//!
//! A data dependency is a named static dataset declared in a `DataDeps.toml`
//! manifest. [`resolve`] turns the name into an absolute local directory:
//! it searches the load path first and, when the data is missing, asks for
//! consent, downloads every source, checks SHA-256 digests, runs the
//! post-fetch step (usually archive extraction) and installs the result
//! with a single atomic rename.
//!
//! ```no_run
//! use std::path::Path;
//! use datadep::{build_load_path, load_manifest, resolve, Env, Platform, StdPromptIo};
//!
//! let manifest = load_manifest(Path::new("DataDeps.toml")).unwrap();
//! let registry = manifest.to_registry().unwrap();
//! let env = Env::from_process();
//! let cwd = std::env::current_dir().unwrap();
//! let load_path = build_load_path(&env, Platform::current(), &cwd);
//! let mnist = resolve(&registry, "MNIST", &load_path, &env, &mut StdPromptIo).unwrap();
//! println!("{}", mnist.path.display());
//! ```

pub mod acquire;
pub mod cli;
pub mod consent;
pub mod locate;
pub mod manifest;
pub mod registry;

pub use acquire::{resolve, FetchReport, ResolveError, Resolver};
pub use consent::{AcceptPolicy, Answer, PromptIo, ScriptedPromptIo, StdPromptIo};
pub use locate::{build_load_path, search, store_dir, Env, LoadPath, Origin, Platform, Resolution, SatisfiedBy};
pub use manifest::{load_manifest, parse_manifest, write_manifest, Manifest, ParseError};
pub use registry::{
    validate_name, ChecksumMode, ChecksumSpec, DataDepSpec, DepKind, PostFetchAction, Registry, RemoteFile,
};
