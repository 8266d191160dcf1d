//! Shared helpers for integration tests: a local HTTP fixture server with a
//! request log, a reference SHA-256, and a sandbox for running the binary.
#![allow(dead_code)]

pub mod arb;
pub mod reference_sha256;

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tiny_http::{Header, Response, Server, StatusCode};

#[derive(Clone)]
pub enum Route {
    Body {
        status: u16,
        body: Arc<Vec<u8>>,
        headers: Vec<(String, String)>,
    },
    Redirect(String),
    /// Sends `chunk` bytes, then sleeps `pause`, until the body is done.
    Throttled {
        body: Arc<Vec<u8>>,
        chunk: usize,
        pause: Duration,
    },
    /// Waits before answering 200 with an empty body.
    Stall(Duration),
    /// Answers 200 with each body in turn; the last one repeats.
    Sequence(Arc<Mutex<Vec<Vec<u8>>>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub method: String,
    pub path: String,
}

pub struct Fixture {
    server: Arc<Server>,
    port: u16,
    routes: Arc<Mutex<HashMap<String, Route>>>,
    log: Arc<Mutex<Vec<Hit>>>,
    thread: Option<JoinHandle<()>>,
}

impl Fixture {
    pub fn start() -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind fixture server"));
        let port = server.server_addr().to_ip().expect("tcp listener").port();
        let routes: Arc<Mutex<HashMap<String, Route>>> = Arc::default();
        let log: Arc<Mutex<Vec<Hit>>> = Arc::default();
        let thread = {
            let server = Arc::clone(&server);
            let routes = Arc::clone(&routes);
            let log = Arc::clone(&log);
            thread::spawn(move || {
                for request in server.incoming_requests() {
                    let path = request.url().split('?').next().unwrap_or("").to_owned();
                    log.lock().unwrap().push(Hit {
                        method: request.method().as_str().to_owned(),
                        path: path.clone(),
                    });
                    let route = routes.lock().unwrap().get(&path).cloned();
                    thread::spawn(move || answer(request, route));
                }
            })
        };
        Self {
            server,
            port,
            routes,
            log,
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://127.0.0.1:{}{path}", self.port)
    }

    pub fn route(&self, path: &str, route: Route) {
        self.routes.lock().unwrap().insert(path.to_owned(), route);
    }

    pub fn serve(&self, path: &str, body: impl Into<Vec<u8>>) {
        self.route(
            path,
            Route::Body {
                status: 200,
                body: Arc::new(body.into()),
                headers: Vec::new(),
            },
        );
    }

    pub fn status(&self, path: &str, status: u16) {
        self.route(
            path,
            Route::Body {
                status,
                body: Arc::new(Vec::new()),
                headers: Vec::new(),
            },
        );
    }

    pub fn redirect(&self, path: &str, to: &str) {
        self.route(path, Route::Redirect(to.to_owned()));
    }

    pub fn serve_sequence(&self, path: &str, bodies: Vec<Vec<u8>>) {
        assert!(!bodies.is_empty());
        self.route(path, Route::Sequence(Arc::new(Mutex::new(bodies))));
    }

    pub fn hits(&self) -> Vec<Hit> {
        self.log.lock().unwrap().clone()
    }

    pub fn hit_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    /// GET requests for `path`.
    pub fn gets(&self, path: &str) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|h| h.method == "GET" && h.path == path)
            .count()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn answer(request: tiny_http::Request, route: Option<Route>) {
    let result = match route {
        None => request.respond(Response::from_string("not found").with_status_code(404)),
        Some(Route::Body { status, body, headers }) => {
            let mut response = Response::from_data(body.as_slice().to_vec()).with_status_code(status);
            for (k, v) in headers {
                response.add_header(Header::from_bytes(k.as_bytes(), v.as_bytes()).unwrap());
            }
            request.respond(response)
        }
        Some(Route::Redirect(to)) => request
            .respond(Response::empty(302).with_header(Header::from_bytes(&b"Location"[..], to.as_bytes()).unwrap())),
        Some(Route::Throttled { body, chunk, pause }) => {
            let len = body.len();
            let reader = Throttle {
                body,
                pos: 0,
                chunk,
                pause,
            };
            request.respond(Response::new(StatusCode(200), Vec::new(), reader, Some(len), None))
        }
        Some(Route::Sequence(bodies)) => {
            let body = {
                let mut bodies = bodies.lock().unwrap();
                if bodies.len() > 1 {
                    bodies.remove(0)
                } else {
                    bodies[0].clone()
                }
            };
            request.respond(Response::from_data(body))
        }
        Some(Route::Stall(wait)) => {
            thread::sleep(wait);
            request.respond(Response::empty(200))
        }
    };
    // Clients that time out or get killed close the socket early.
    let _ = result;
}

struct Throttle {
    body: Arc<Vec<u8>>,
    pos: usize,
    chunk: usize,
    pause: Duration,
}

impl Read for Throttle {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.body.len() {
            return Ok(0);
        }
        if self.pos > 0 && self.pos.is_multiple_of(self.chunk) {
            thread::sleep(self.pause);
        }
        let until_pause = self.chunk - self.pos % self.chunk;
        let n = buf.len().min(until_pause).min(self.body.len() - self.pos);
        buf[..n].copy_from_slice(&self.body[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    reference_sha256::hex_digest(data)
}

/// An isolated HOME, working directory and store for running `datadep`.
pub struct Sandbox {
    pub root: tempfile::TempDir,
    pub home: PathBuf,
    pub work: PathBuf,
    pub store: PathBuf,
    pub extra_env: Vec<(String, String)>,
}

impl Sandbox {
    pub fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let home = root.path().join("home");
        let work = root.path().join("work");
        let store = root.path().join("store");
        fs::create_dir_all(&home).unwrap();
        fs::create_dir_all(&work).unwrap();
        Self {
            root,
            home,
            work,
            store,
            extra_env: Vec::new(),
        }
    }

    pub fn env(mut self, key: &str, value: &str) -> Self {
        self.extra_env.push((key.to_owned(), value.to_owned()));
        self
    }

    pub fn write_manifest(&self, text: &str) {
        fs::write(self.work.join("DataDeps.toml"), text).unwrap();
    }

    pub fn command(&self, args: &[&str]) -> Command {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_datadep"));
        cmd.args(args)
            .current_dir(&self.work)
            .env_clear()
            .env("HOME", &self.home)
            .env("DATADEP_STORE", &self.store)
            .env("DATADEP_LOG", "info");
        for (k, v) in &self.extra_env {
            cmd.env(k, v);
        }
        cmd
    }

    pub fn run(&self, args: &[&str]) -> Output {
        self.command(args).output().expect("spawn datadep")
    }

    /// Everything under `root`, as relative paths with file contents.
    pub fn snapshot(&self) -> Vec<(PathBuf, Option<Vec<u8>>)> {
        snapshot(self.root.path())
    }
}

pub fn snapshot(root: &Path) -> Vec<(PathBuf, Option<Vec<u8>>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Option<Vec<u8>>)>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            if path.is_dir() {
                out.push((rel, None));
                walk(root, &path, out);
            } else {
                out.push((rel, fs::read(&path).ok()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// A manifest entry with one URL.
pub fn entry(name: &str, url: &str, extra: &str) -> String {
    format!("[[datadep]]\nname = \"{name}\"\nmessage = \"test data\"\nurls = [\"{url}\"]\n{extra}\n")
}

pub fn manifest(entries: &[String]) -> String {
    let mut text = String::from("version = 1\n\n");
    for e in entries {
        text.push_str(e);
        text.push('\n');
    }
    text
}

/// A gzip-compressed tar with regular files. Names are written verbatim, so
/// hostile paths such as `../x` can be produced.
pub fn tar_gz(files: &[(&str, &[u8])]) -> Vec<u8> {
    let mut tar = Vec::new();
    for (name, data) in files {
        let mut header = tar::Header::new_old();
        let raw = &mut header.as_old_mut().name;
        raw[..name.len()].copy_from_slice(name.as_bytes());
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_entry_type(tar::EntryType::Regular);
        header.set_cksum();
        tar.extend_from_slice(header.as_bytes());
        tar.extend_from_slice(data);
        tar.resize(tar.len().div_ceil(512) * 512, 0);
    }
    tar.resize(tar.len() + 1024, 0);
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    io::Write::write_all(&mut gz, &tar).unwrap();
    gz.finish().unwrap()
}
