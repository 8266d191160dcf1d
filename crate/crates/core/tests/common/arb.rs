//! proptest strategies for manifests and names.

use std::collections::HashSet;

use datadep::registry::{DepKind, Provenance};
use datadep::{validate_name, ChecksumSpec, DataDepSpec, Manifest, PostFetchAction, RemoteFile};
use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;

/// Field names a `[[datadep]]` table accepts.
pub const KNOWN_FIELDS: &[&str] = &[
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

pub fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_][A-Za-z0-9_ .-]{0,24}".prop_filter("valid name", |n| validate_name(n).is_ok())
}

/// Free text, including quotes, backslashes, newlines and non-ASCII.
pub fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[ -~]{0,40}", "[a-z \"\\\\\n\t'#=\\[\\]{}]{0,30}", "\\PC{0,20}",]
}

fn url() -> impl Strategy<Value = String> {
    (
        prop_oneof![Just("http"), Just("https")],
        "[a-z][a-z0-9-]{0,10}(\\.[a-z]{2,5}){0,2}",
        option::of(1024u16..65535),
        "(/[A-Za-z0-9._~-]{1,12}){0,3}",
        option::of("[a-z]{1,5}=[a-z0-9]{1,5}"),
    )
        .prop_map(|(scheme, host, port, path, query)| {
            let mut u = format!("{scheme}://{host}");
            if let Some(p) = port {
                u.push_str(&format!(":{p}"));
            }
            u.push_str(if path.is_empty() { "/" } else { &path });
            if let Some(q) = query {
                u.push('?');
                u.push_str(&q);
            }
            u
        })
}

fn filename() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_][A-Za-z0-9_. -]{0,16}"
}

fn digest() -> impl Strategy<Value = String> {
    "[0-9a-f]{64}"
}

fn provenance() -> impl Strategy<Value = Provenance> {
    (
        option::of(text()),
        option::of(text()),
        option::of(text()),
        option::of(text()),
    )
        .prop_map(|(author, license, citation, website)| Provenance {
            author,
            license,
            citation,
            website,
        })
}

fn managed() -> impl Strategy<Value = DataDepSpec> {
    vec((url(), option::of(filename())), 1..4)
        .prop_flat_map(|sources| {
            let n = sources.len();
            let checksum = prop_oneof![
                Just(ChecksumSpec::absent()),
                Just(ChecksumSpec::ignore()),
                vec(digest(), n).prop_map(ChecksumSpec::enforce),
            ];
            (
                Just(sources),
                checksum,
                prop_oneof![
                    Just(PostFetchAction::None),
                    Just(PostFetchAction::UnpackAuto),
                    Just(PostFetchAction::UnpackThenDeleteArchive),
                ],
                option::of(1u64..100_000),
            )
        })
        .prop_map(|(sources, checksum, post_fetch, timeout)| {
            let remotes = sources
                .into_iter()
                .map(|(u, f)| match f {
                    Some(f) => RemoteFile::with_filename(u, f),
                    None => RemoteFile::new(u),
                })
                .collect();
            let mut spec = DataDepSpec::managed("", "", remotes)
                .with_checksum(checksum)
                .with_post_fetch(post_fetch);
            spec.timeout_secs = timeout;
            spec
        })
}

pub fn spec() -> impl Strategy<Value = DataDepSpec> {
    (
        name(),
        text(),
        provenance(),
        prop_oneof![4 => managed(), 1 => Just(DataDepSpec::manual("", ""))],
    )
        .prop_map(|(name, message, provenance, mut spec)| {
            spec.name = name;
            spec.message = message;
            spec.provenance = provenance;
            debug_assert!(spec.kind == DepKind::Managed || spec.remote_sources.is_empty());
            spec
        })
}

pub fn manifest(max_deps: usize) -> impl Strategy<Value = Manifest> {
    vec(spec(), 0..=max_deps).prop_map(|specs| {
        let mut seen = HashSet::new();
        let deps = specs
            .into_iter()
            .filter(|s| seen.insert(s.name.to_lowercase()))
            .collect();
        Manifest::new(deps)
    })
}

/// A key that is not a known field: either a near-miss typo or a fresh word.
pub fn unknown_key() -> impl Strategy<Value = String> {
    let typo = (
        proptest::sample::select(KNOWN_FIELDS),
        0usize..4,
        any::<prop::sample::Index>(),
        "[a-z_]",
    )
        .prop_map(|(field, op, at, ch)| {
            let mut chars: Vec<char> = field.chars().collect();
            let i = at.index(chars.len());
            match op {
                0 => {
                    chars.remove(i);
                }
                1 => chars.insert(i, chars[i]),
                2 if i + 1 < chars.len() => chars.swap(i, i + 1),
                _ => chars[i] = ch.chars().next().unwrap(),
            }
            chars.into_iter().collect::<String>()
        });
    prop_oneof![typo, "[a-z][a-z_]{1,12}"].prop_filter("must be unknown and non-empty", |k| {
        !k.is_empty() && !KNOWN_FIELDS.contains(&k.as_str())
    })
}
