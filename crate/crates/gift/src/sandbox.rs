//! Isolated execution of candidate code against a task's test cases.
//!
//! Each candidate runs in its own child interpreter (`python -I -E -S`)
//! inside a private scratch directory with a cleared environment. A
//! generated harness executes the candidate source once, then every test
//! case in order, emitting one verdict line per test on stdout behind a
//! per-run sentinel. The parent enforces the wall timeout and output byte
//! caps and kills the child when either is exceeded; tests that never got a
//! verdict are filled in with the corresponding failure kind.
//!
//! In-process guards (network denial, scratch-confined `open`, an address
//! space rlimit) make breach attempts fail the affected test with
//! `resource_limit` instead of taking down the pipeline. They are
//! best-effort userspace guards, not a container boundary.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FailureKind, PassReport, SeedTask, TestOutcome};
use crate::sem::Semaphore;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("language runtime unavailable: {0}")]
    Environment(String),
    #[error("candidate code must be nonempty")]
    EmptyCode,
    #[error("pass_rate requires a nonempty report list")]
    EmptyReports,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Resource limits for one candidate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandboxLimits {
    pub wall_timeout_ms: u64,
    pub memory_bytes: u64,
    /// Cap on bytes the parent keeps from each of stdout and stderr.
    pub output_cap_bytes: usize,
    pub deny_network: bool,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            wall_timeout_ms: 10_000,
            memory_bytes: 512 * 1024 * 1024,
            output_cap_bytes: 256 * 1024,
            deny_network: true,
        }
    }
}

/// Verify the configured interpreter actually runs; called once at startup
/// so a missing runtime fails fast, before any generation happens.
pub fn ensure_runtime(python: &str) -> Result<(), SandboxError> {
    let status = Command::new(python)
        .arg("--version")
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(|e| SandboxError::Environment(format!("{python}: {e}")))?;
    if !status.success() {
        return Err(SandboxError::Environment(format!(
            "{python} --version exited with {status}"
        )));
    }
    Ok(())
}

/// Fraction of reports with every test passing.
pub fn pass_rate(reports: &[PassReport]) -> Result<f64, SandboxError> {
    if reports.is_empty() {
        return Err(SandboxError::EmptyReports);
    }
    let passing = reports.iter().filter(|r| r.all_passed).count();
    Ok(passing as f64 / reports.len() as f64)
}

const HARNESS_TEMPLATE: &str = r#"
import sys, os, json, ast, math

SCRATCH = os.path.dirname(os.path.abspath(__file__))
SENTINEL = "__SENTINEL__"

def _emit(index, passed, kind=None, detail=None):
    record = {"index": index, "passed": passed}
    if kind is not None:
        record["kind"] = kind
    if detail is not None:
        record["detail"] = detail[:500]
    sys.stdout.write(SENTINEL + " " + json.dumps(record) + "\n")
    sys.stdout.flush()

class SandboxViolation(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind

try:
    import resource
    resource.setrlimit(resource.RLIMIT_AS, (__MEMORY_BYTES__, __MEMORY_BYTES__))
except Exception:
    pass

import builtins as _builtins
_orig_open = _builtins.open
_orig_import = _builtins.__import__

if __DENY_NETWORK__:
    import socket as _socket_mod
    def _deny_network(*args, **kwargs):
        raise SandboxViolation("resource_limit", "network access denied by sandbox")
    for _name in ("socket", "socketpair", "fromfd", "create_connection",
                  "create_server", "getaddrinfo", "gethostbyname",
                  "gethostbyaddr"):
        if hasattr(_socket_mod, _name):
            setattr(_socket_mod, _name, _deny_network)
    _denied_modules = {"subprocess", "http", "urllib", "requests",
                       "ftplib", "smtplib", "telnetlib", "ssl"}
    def _guarded_import(name, *args, **kwargs):
        base = name.split(".")[0]
        if base in _denied_modules:
            raise SandboxViolation("resource_limit",
                                   "import of %r denied by sandbox" % name)
        return _orig_import(name, *args, **kwargs)
    _builtins.__import__ = _guarded_import

def _guarded_open(file, mode="r", *args, **kwargs):
    if isinstance(file, int):
        return _orig_open(file, mode, *args, **kwargs)
    try:
        path = os.path.realpath(os.path.join(SCRATCH, os.fspath(file)))
    except TypeError:
        raise SandboxViolation("resource_limit", "unsupported open target")
    if path != SCRATCH and not path.startswith(SCRATCH + os.sep):
        raise SandboxViolation("resource_limit",
                               "file access outside scratch directory denied")
    return _orig_open(path, mode, *args, **kwargs)
_builtins.open = _guarded_open

with _orig_open(os.path.join(SCRATCH, "tests.json"), "r", encoding="utf-8") as fh:
    TESTS = json.load(fh)

with _orig_open(os.path.join(SCRATCH, "candidate.py"), "r", encoding="utf-8") as fh:
    SOURCE = fh.read()

namespace = {"__name__": "__candidate__"}
try:
    exec(compile(SOURCE, "candidate.py", "exec"), namespace)
except SandboxViolation as exc:
    for i in range(len(TESTS)):
        _emit(i, False, exc.kind, "candidate body: %s" % exc)
    sys.exit(0)
except MemoryError:
    for i in range(len(TESTS)):
        _emit(i, False, "resource_limit", "candidate body exceeded memory limit")
    sys.exit(0)
except BaseException as exc:
    detail = "candidate body raised %s: %s" % (type(exc).__name__, exc)
    for i in range(len(TESTS)):
        _emit(i, False, "runtime_error", detail)
    sys.exit(0)

def _values_match(actual, expected_text, comparison):
    try:
        expected = ast.literal_eval(expected_text)
        parseable = True
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        expected = expected_text
        parseable = False
    if comparison.get("kind") == "approx":
        tol = comparison.get("tolerance", 1e-6)
        return math.isclose(actual, expected, rel_tol=tol, abs_tol=0.0)
    if parseable:
        return actual == expected
    return str(actual) == expected_text

for index, test in enumerate(TESTS):
    try:
        actual = eval(test["call"], namespace)
    except SandboxViolation as exc:
        _emit(index, False, exc.kind, str(exc))
        continue
    except MemoryError:
        _emit(index, False, "resource_limit", "memory limit exceeded")
        continue
    except BaseException as exc:
        _emit(index, False, "runtime_error", "%s: %s" % (type(exc).__name__, exc))
        continue
    try:
        ok = _values_match(actual, test["expected"],
                           test.get("comparison") or {"kind": "equality"})
    except BaseException as exc:
        _emit(index, False, "runtime_error",
              "comparison raised %s: %s" % (type(exc).__name__, exc))
        continue
    if ok:
        _emit(index, True)
    else:
        _emit(index, False, "wrong_output",
              "expected %s, got %r" % (test["expected"], actual))
"#;

#[derive(Serialize)]
struct HarnessTest<'a> {
    call: &'a str,
    expected: &'a str,
    comparison: &'a crate::model::Comparison,
}

#[derive(Deserialize)]
struct Verdict {
    index: usize,
    passed: bool,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    detail: Option<String>,
}

fn failure_kind_from_str(kind: &str) -> FailureKind {
    match kind {
        "wrong_output" => FailureKind::WrongOutput,
        "timeout" => FailureKind::Timeout,
        "resource_limit" => FailureKind::ResourceLimit,
        _ => FailureKind::RuntimeError,
    }
}

/// Parse the verdict stream printed by the harness. Lines not carrying the
/// sentinel (candidate prints, partial writes) are ignored; out-of-range or
/// repeated indices keep the first verdict seen. Pure; fuzzed directly.
pub fn parse_verdict_stream(
    stream: &str,
    sentinel: &str,
    num_tests: usize,
) -> Vec<Option<TestOutcome>> {
    let mut outcomes: Vec<Option<TestOutcome>> = vec![None; num_tests];
    for line in stream.lines() {
        let Some(rest) = line.strip_prefix(sentinel) else {
            continue;
        };
        let Ok(verdict) = serde_json::from_str::<Verdict>(rest.trim()) else {
            continue;
        };
        if verdict.index >= num_tests || outcomes[verdict.index].is_some() {
            continue;
        }
        let failure_kind = if verdict.passed {
            None
        } else {
            Some(
                verdict
                    .kind
                    .as_deref()
                    .map(failure_kind_from_str)
                    .unwrap_or(FailureKind::RuntimeError),
            )
        };
        outcomes[verdict.index] = Some(TestOutcome {
            passed: verdict.passed,
            failure_kind,
            detail: verdict.detail,
        });
    }
    outcomes
}

/// Drain a pipe on its own thread, keeping at most `cap` bytes and raising
/// `over_cap` when the child produced more.
fn spawn_reader<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
    over_cap: Arc<AtomicBool>,
) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut total = 0usize;
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    total += n;
                    if total > cap {
                        over_cap.store(true, Ordering::SeqCst);
                        let room = cap.saturating_sub(kept.len());
                        kept.extend_from_slice(&buf[..n.min(room)]);
                    } else {
                        kept.extend_from_slice(&buf[..n]);
                    }
                }
            }
        }
        kept
    })
}

/// Run one candidate against every test of `task`, in order, under
/// `limits`. All tests always run; a failing test never short-circuits the
/// rest.
pub fn run_tests(
    python: &str,
    code: &str,
    task: &SeedTask,
    limits: &SandboxLimits,
) -> Result<PassReport, SandboxError> {
    if code.trim().is_empty() {
        return Err(SandboxError::EmptyCode);
    }
    let started = Instant::now();
    let scratch = tempfile::TempDir::new()?;
    let scratch_path = scratch.path();

    let mut nonce_bytes = [0u8; 8];
    rand::thread_rng().fill_bytes(&mut nonce_bytes);
    let sentinel = format!("@@VERDICT:{};@@", hex::encode(nonce_bytes));

    std::fs::write(scratch_path.join("candidate.py"), code)?;
    let tests: Vec<HarnessTest<'_>> = task
        .tests
        .iter()
        .map(|t| HarnessTest {
            call: &t.call_expression,
            expected: &t.expected,
            comparison: &t.comparison,
        })
        .collect();
    std::fs::write(
        scratch_path.join("tests.json"),
        serde_json::to_vec(&tests).expect("test serialization is infallible"),
    )?;
    let harness = HARNESS_TEMPLATE
        .replace("__SENTINEL__", &sentinel)
        .replace("__MEMORY_BYTES__", &limits.memory_bytes.to_string())
        .replace(
            "__DENY_NETWORK__",
            if limits.deny_network { "True" } else { "False" },
        );
    std::fs::write(scratch_path.join("harness.py"), harness)?;

    let mut child = Command::new(python)
        .arg("-I")
        .arg("-E")
        .arg("-S")
        .arg("-u")
        .arg(scratch_path.join("harness.py"))
        .current_dir(scratch_path)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SandboxError::Environment(format!("{python}: {e}")))?;

    let over_cap = Arc::new(AtomicBool::new(false));
    let stdout_reader = spawn_reader(
        child.stdout.take().expect("stdout piped"),
        limits.output_cap_bytes,
        Arc::clone(&over_cap),
    );
    let stderr_reader = spawn_reader(
        child.stderr.take().expect("stderr piped"),
        limits.output_cap_bytes,
        Arc::clone(&over_cap),
    );

    let timeout = Duration::from_millis(limits.wall_timeout_ms);
    let mut timed_out = false;
    let mut capped = false;
    loop {
        if let Some(_status) = child.try_wait()? {
            break;
        }
        if started.elapsed() >= timeout {
            timed_out = true;
            let _ = child.kill();
            let _ = child.wait();
            break;
        }
        if over_cap.load(Ordering::SeqCst) {
            capped = true;
            let _ = child.kill();
            let _ = child.wait();
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }

    let stdout_bytes = stdout_reader.join().unwrap_or_default();
    let _stderr_bytes = stderr_reader.join().unwrap_or_default();
    let stdout_text = String::from_utf8_lossy(&stdout_bytes);

    let wall_time_ms = started.elapsed().as_millis() as u64;
    let parsed = parse_verdict_stream(&stdout_text, &sentinel, task.tests.len());
    let per_test: Vec<TestOutcome> = parsed
        .into_iter()
        .map(|outcome| {
            outcome.unwrap_or_else(|| {
                let (failure_kind, detail) = if timed_out {
                    (
                        FailureKind::Timeout,
                        format!("wall timeout of {} ms exceeded", limits.wall_timeout_ms),
                    )
                } else if capped {
                    (
                        FailureKind::ResourceLimit,
                        format!("output cap of {} bytes exceeded", limits.output_cap_bytes),
                    )
                } else {
                    (
                        FailureKind::RuntimeError,
                        "harness terminated before producing a verdict".into(),
                    )
                };
                TestOutcome {
                    passed: false,
                    failure_kind: Some(failure_kind),
                    detail: Some(detail),
                }
            })
        })
        .collect();

    Ok(PassReport::from_outcomes(per_test, wall_time_ms))
}

/// A configured sandbox: interpreter, limits, and a cap on how many
/// candidate processes run at once. Cloneable across worker threads.
#[derive(Clone)]
pub struct Sandbox {
    python: String,
    limits: SandboxLimits,
    gate: Arc<Semaphore>,
}

impl Sandbox {
    pub fn new(python: &str, limits: SandboxLimits, max_concurrent: usize) -> Result<Self, SandboxError> {
        ensure_runtime(python)?;
        Ok(Sandbox {
            python: python.to_string(),
            limits,
            gate: Arc::new(Semaphore::new(max_concurrent)),
        })
    }

    pub fn run(&self, code: &str, task: &SeedTask) -> Result<PassReport, SandboxError> {
        let _permit = self.gate.acquire();
        run_tests(&self.python, code, task, &self.limits)
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.limits
    }
}
