//! The pre-download provenance prompt and the accept/decline decision.

use std::fmt::Write as _;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::Path;
use std::sync::Mutex;

use crate::locate::Env;
use crate::registry::DataDepSpec;

pub const ENV_ALWAYS_ACCEPT: &str = "DATADEP_ALWAYS_ACCEPT";

pub const QUESTION: &str = "Download now? [y/N]";

/// Serialises prompts so concurrent resolves never interleave their text.
static PROMPT_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptPolicy {
    Interactive,
    AlwaysAccept,
    AlwaysDecline,
}

impl AcceptPolicy {
    pub fn from_env(env: &Env) -> Self {
        match env.get(ENV_ALWAYS_ACCEPT) {
            Some("true") => AcceptPolicy::AlwaysAccept,
            Some("false") => AcceptPolicy::AlwaysDecline,
            _ => AcceptPolicy::Interactive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Accept,
    Decline,
}

/// Where prompts are written and answers read.
pub trait PromptIo {
    /// Whether a human can answer (stdin is a terminal).
    fn is_interactive(&self) -> bool;
    fn write_prompt(&mut self, text: &str) -> io::Result<()>;
    /// Reads one line; `Ok(None)` on EOF.
    fn read_line(&mut self) -> io::Result<Option<String>>;
    /// Free-form diagnostics, e.g. why a prompt was skipped.
    fn diagnostic(&mut self, text: &str);
}

/// Prompts on stderr and reads answers from stdin.
#[derive(Debug, Default)]
pub struct StdPromptIo;

impl PromptIo for StdPromptIo {
    fn is_interactive(&self) -> bool {
        io::stdin().is_terminal()
    }

    fn write_prompt(&mut self, text: &str) -> io::Result<()> {
        let mut err = io::stderr().lock();
        err.write_all(text.as_bytes())?;
        if !text.ends_with(' ') && !text.ends_with('\n') {
            err.write_all(b" ")?;
        }
        err.flush()
    }

    fn read_line(&mut self) -> io::Result<Option<String>> {
        let mut line = String::new();
        match io::stdin().lock().read_line(&mut line)? {
            0 => Ok(None),
            _ => Ok(Some(line)),
        }
    }

    fn diagnostic(&mut self, text: &str) {
        eprintln!("{text}");
    }
}

/// Scripted prompt IO for tests and embedding: records everything written.
#[derive(Debug, Default)]
pub struct ScriptedPromptIo {
    pub interactive: bool,
    pub input: std::collections::VecDeque<String>,
    pub prompts: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl ScriptedPromptIo {
    /// An interactive session that will answer with `lines` in order.
    pub fn answering<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            interactive: true,
            input: lines.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// A session whose stdin is not a terminal.
    pub fn non_interactive() -> Self {
        Self::default()
    }
}

impl PromptIo for ScriptedPromptIo {
    fn is_interactive(&self) -> bool {
        self.interactive
    }

    fn write_prompt(&mut self, text: &str) -> io::Result<()> {
        self.prompts.push(text.to_owned());
        Ok(())
    }

    fn read_line(&mut self) -> io::Result<Option<String>> {
        Ok(self.input.pop_front())
    }

    fn diagnostic(&mut self, text: &str) {
        self.diagnostics.push(text.to_owned());
    }
}

/// Removes control characters other than newline and tab.
pub fn strip_control(text: &str) -> String {
    text.chars()
        .filter(|&c| c == '\n' || c == '\t' || !c.is_control())
        .collect()
}

/// Renders the prompt shown before a download.
///
/// Elements appear in a fixed order: name, provenance message, source URLs,
/// destination, optional size hint, question.
pub fn render_prompt(spec: &DataDepSpec, dest: &Path, total_size_hint: Option<u64>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "This program has requested access to the data dependency {}.",
        strip_control(&spec.name)
    );
    let _ = writeln!(out, "It is not present on this system, so it must be downloaded.");
    let _ = writeln!(out);
    let message = strip_control(&spec.display_message());
    if !message.is_empty() {
        let _ = writeln!(out, "{}", message.trim_end());
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "Sources:");
    for remote in &spec.remote_sources {
        let _ = writeln!(out, "  {}", strip_control(&remote.url));
    }
    let _ = writeln!(out, "Destination: {}", strip_control(&dest.to_string_lossy()));
    if let Some(bytes) = total_size_hint {
        let _ = writeln!(out, "Size: {}", human_bytes(bytes));
    }
    out.push_str(QUESTION);
    out
}

pub(crate) fn human_bytes(bytes: u64) -> String {
    const UNITS: [&str; 5] = ["B", "KiB", "MiB", "GiB", "TiB"];
    let mut value = bytes as f64;
    let mut unit = 0;
    while value >= 1024.0 && unit + 1 < UNITS.len() {
        value /= 1024.0;
        unit += 1;
    }
    if unit == 0 {
        format!("{bytes} B")
    } else {
        format!("{value:.1} {} ({bytes} bytes)", UNITS[unit])
    }
}

/// True for "y", "yes" in any case, ignoring surrounding whitespace.
pub fn is_affirmative(line: &str) -> bool {
    let answer = line.trim();
    answer.eq_ignore_ascii_case("y") || answer.eq_ignore_ascii_case("yes")
}

/// Decides whether to download. Defaults to [`Answer::Decline`] on anything
/// but an explicit yes, including EOF, IO errors and a non-terminal stdin.
pub fn ask(io: &mut dyn PromptIo, policy: AcceptPolicy, rendered: &str) -> Answer {
    match policy {
        AcceptPolicy::AlwaysAccept => return Answer::Accept,
        AcceptPolicy::AlwaysDecline => return Answer::Decline,
        AcceptPolicy::Interactive => {}
    }
    let _guard = PROMPT_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    if !io.is_interactive() {
        io.diagnostic(&format!(
            "{}\nNot asking: standard input is not a terminal. \
             Set {ENV_ALWAYS_ACCEPT}=true to download without prompting.",
            rendered.trim_end_matches(QUESTION).trim_end()
        ));
        return Answer::Decline;
    }
    if io.write_prompt(rendered).is_err() {
        return Answer::Decline;
    }
    match io.read_line() {
        Ok(Some(line)) if is_affirmative(&line) => Answer::Accept,
        _ => Answer::Decline,
    }
}
