//! Candidate execution: splice into a private copy of the repository, run
//! each test command in its own process group under time and memory limits.

use std::fs;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::EvalError;
use crate::corpus::{check_syntax, dedent, GenerationTask, Span};
use crate::gateway::CodeCandidate;

pub const PYTHON_PLACEHOLDER: &str = "{python}";

/// Proxy variables removed from the test environment.
const PROXY_VARS: &[&str] =
    &["http_proxy", "https_proxy", "all_proxy", "HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY", "no_proxy", "NO_PROXY"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    /// Interpreter substituted for `{python}` in test commands.
    pub python: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    /// Allowance for killing and reaping a timed-out process.
    #[serde(with = "secs")]
    pub grace: Duration,
    pub memory_bytes: u64,
    /// Try to run tests in a fresh network namespace. Needs privileges the
    /// host may not grant; failure is silent.
    pub isolate_network: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            python: "python3".into(),
            timeout: Duration::from_secs(10),
            grace: Duration::from_secs(2),
            memory_bytes: 512 * 1024 * 1024,
            isolate_network: true,
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictStatus {
    Pass,
    TestFail,
    RuntimeError,
    Timeout,
    CandidateUnparsable,
}

impl VerdictStatus {
    fn severity(self) -> u8 {
        match self {
            VerdictStatus::Pass => 0,
            VerdictStatus::TestFail => 1,
            VerdictStatus::RuntimeError => 2,
            VerdictStatus::Timeout => 3,
            VerdictStatus::CandidateUnparsable => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub command: Vec<String>,
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    pub wall_time: f64,
    /// Last part of the combined output, for failures.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub output_tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub status: VerdictStatus,
    pub tests: Vec<TestOutcome>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ExecutionVerdict {
    pub fn unparsable(note: impl Into<String>) -> Self {
        ExecutionVerdict {
            status: VerdictStatus::CandidateUnparsable,
            tests: Vec::new(),
            wall_time: 0.0,
            note: Some(note.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

fn indent_of(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

/// Replaces lines `span` of `file_text` with `candidate`, re-indented to the
/// target's indentation. The target's decorators are kept when the
/// candidate brings none. The result must parse.
pub fn splice(file_text: &str, span: Span, candidate: &str) -> Result<String, String> {
    let lines: Vec<&str> = file_text.split_inclusive('\n').collect();
    if span.start == 0 || span.start > span.end || span.end > lines.len() {
        return Err(format!("target span {}-{} outside file of {} lines", span.start, span.end, lines.len()));
    }
    let candidate = dedent(candidate);
    let original = &lines[span.start - 1..span.end];
    let indent = indent_of(original[0]);
    let candidate_decorated =
        candidate.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.trim_start().starts_with('@'));

    let mut out = String::with_capacity(file_text.len() + candidate.len());
    for line in &lines[..span.start - 1] {
        out.push_str(line);
    }
    if !candidate_decorated {
        for line in original.iter().take_while(|l| l.trim_start().starts_with('@')) {
            out.push_str(line.trim_end_matches(['\n', '\r']));
            out.push('\n');
        }
    }
    for line in candidate.lines() {
        if !line.trim().is_empty() {
            out.push_str(indent);
            out.push_str(line);
        }
        out.push('\n');
    }
    for line in &lines[span.end..] {
        out.push_str(line);
    }
    check_syntax(&out)?;
    Ok(out)
}

/// Copies `root` into `dest`, skipping bytecode caches and VCS metadata.
pub fn copy_tree(root: &Path, dest: &Path) -> io::Result<()> {
    let walker = WalkDir::new(root).into_iter().filter_entry(|e| {
        let name = e.file_name().to_string_lossy();
        !(e.depth() > 0 && (name == "__pycache__" || name == ".git"))
    });
    for entry in walker {
        let entry = entry.map_err(io::Error::from)?;
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let target = dest.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn tail(text: &str, max: usize) -> String {
    if text.len() <= max {
        return text.to_string();
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

fn classify_failure(output: &str) -> VerdictStatus {
    if output.contains("errors=") {
        VerdictStatus::RuntimeError
    } else if output.contains("failures=") || output.contains("AssertionError") {
        VerdictStatus::TestFail
    } else {
        VerdictStatus::RuntimeError
    }
}

fn read_lossy(path: &Path) -> String {
    let mut buf = Vec::new();
    if let Ok(mut f) = fs::File::open(path) {
        let _ = f.read_to_end(&mut buf);
    }
    String::from_utf8_lossy(&buf).into_owned()
}

/// Runs one test command with `cwd` as working directory.
pub fn run_test(command: &[String], cwd: &Path, logs: &Path, cfg: &SandboxConfig) -> Result<TestOutcome, EvalError> {
    let argv: Vec<String> =
        command.iter().map(|a| if a == PYTHON_PLACEHOLDER { cfg.python.clone() } else { a.clone() }).collect();
    let out_path = logs.join("stdout");
    let err_path = logs.join("stderr");
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(fs::File::create(&out_path)?)
        .stderr(fs::File::create(&err_path)?)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0");
    for var in PROXY_VARS {
        cmd.env_remove(var);
    }
    let memory = cfg.memory_bytes as libc::rlim_t;
    let isolate = cfg.isolate_network;
    // SAFETY: only async-signal-safe syscalls run between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            libc::setpgid(0, 0);
            let limit = libc::rlimit { rlim_cur: memory, rlim_max: memory };
            libc::setrlimit(libc::RLIMIT_AS, &limit);
            if isolate {
                libc::unshare(libc::CLONE_NEWNET);
            }
            Ok(())
        });
    }

    let started = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            return Err(EvalError::InterpreterMissing { program: argv[0].clone() })
        }
        Err(err) => return Err(err.into()),
    };
    let mut sleep = Duration::from_millis(2);
    let (exit, timed_out) = loop {
        if let Some(status) = child.try_wait()? {
            break (Some(status), false);
        }
        if started.elapsed() >= cfg.timeout {
            // SAFETY: the child leads its own process group (setpgid above).
            unsafe {
                libc::killpg(child.id() as libc::pid_t, libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            break (None, true);
        }
        thread::sleep(sleep);
        sleep = (sleep * 2).min(Duration::from_millis(50));
    };
    let wall_time = started.elapsed().as_secs_f64();
    let output = format!("{}{}", read_lossy(&out_path), read_lossy(&err_path));

    let (status, exit_code) = match exit {
        _ if timed_out => (VerdictStatus::Timeout, None),
        Some(s) if s.success() => (VerdictStatus::Pass, Some(0)),
        Some(s) if s.signal().is_some() => (VerdictStatus::RuntimeError, None),
        Some(s) => (classify_failure(&output), s.code()),
        None => (VerdictStatus::RuntimeError, None),
    };
    let output_tail = if status == VerdictStatus::Pass { String::new() } else { tail(&output, 2000) };
    Ok(TestOutcome { command: command.to_vec(), status, exit_code, wall_time, output_tail })
}

/// Executes `candidate` against `task`'s tests in a fresh copy of the
/// repository at `repo_root`. Tests after a timeout are not run.
pub fn execute_candidate(
    candidate: &CodeCandidate,
    task: &GenerationTask,
    repo_root: &Path,
    cfg: &SandboxConfig,
) -> Result<ExecutionVerdict, EvalError> {
    let original = fs::read_to_string(repo_root.join(&task.target_path))?;
    let spliced = match splice(&original, task.target_span, &candidate.source) {
        Ok(text) => text,
        Err(err) => return Ok(ExecutionVerdict::unparsable(format!("splice failed: {err}"))),
    };
    let scratch = tempfile::Builder::new().prefix("repogen-sandbox-").tempdir()?;
    let checkout: PathBuf = scratch.path().join("repo");
    copy_tree(repo_root, &checkout)?;
    fs::write(checkout.join(&task.target_path), spliced)?;
    let logs = scratch.path().join("logs");
    fs::create_dir_all(&logs)?;

    let mut tests = Vec::with_capacity(task.test_suite.len());
    let mut wall_time = 0.0;
    for command in &task.test_suite {
        let outcome = run_test(command, &checkout, &logs, cfg)?;
        wall_time += outcome.wall_time;
        let stop = outcome.status == VerdictStatus::Timeout;
        tests.push(outcome);
        if stop {
            break;
        }
    }
    let status = tests.iter().map(|t| t.status).max_by_key(|s| s.severity()).unwrap_or(VerdictStatus::Pass);
    Ok(ExecutionVerdict { status, tests, wall_time, note: None })
}

/// Fails with a remediation hint when the interpreter cannot be started.
pub fn check_interpreter(cfg: &SandboxConfig) -> Result<(), EvalError> {
    match Command::new(&cfg.python).arg("-c").arg("pass").stdout(Stdio::null()).stderr(Stdio::null()).status() {
        Ok(s) if s.success() => Ok(()),
        Ok(_) | Err(_) => Err(EvalError::InterpreterMissing { program: cfg.python.clone() }),
    }
}
