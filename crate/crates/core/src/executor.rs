//! Sandboxed execution of guest programs.
//!
//! Each run gets a fresh temporary working directory, a scrubbed environment,
//! its own process group and an address-space cap. The wall clock is enforced
//! with SIGTERM at `wall_time` and SIGKILL at `wall_time + grace`; the whole
//! process group is killed once the guest exits so no stragglers survive.

use std::io::{Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{par_map, Semaphore};

pub const DEFAULT_MEMORY: u64 = 512 * 1024 * 1024;
pub const DEFAULT_OUTPUT_CAP: usize = 8 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("guest runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("invalid resource limits: {0}")]
    InvalidLimits(&'static str),
    #[error("runtime template has no {{program}} placeholder")]
    MissingPlaceholder,
    #[error("function-call entry requested but the runtime has no function driver")]
    NoFunctionDriver,
    #[error("sandbox setup failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceLimits {
    pub wall_time: Duration,
    pub memory: u64,
    pub output_cap: usize,
    pub grace: Duration,
}

impl ResourceLimits {
    /// Limits with the default memory and output caps and a grace period of
    /// half the wall time, capped at one second.
    pub fn with_wall_time(wall_time: Duration) -> Self {
        Self {
            wall_time,
            memory: DEFAULT_MEMORY,
            output_cap: DEFAULT_OUTPUT_CAP,
            grace: (wall_time / 2).min(Duration::from_secs(1)),
        }
    }

    pub fn grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn memory(mut self, bytes: u64) -> Self {
        self.memory = bytes;
        self
    }

    pub fn output_cap(mut self, bytes: usize) -> Self {
        self.output_cap = bytes;
        self
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.wall_time.is_zero() {
            return Err(ExecError::InvalidLimits("wall_time must be positive"));
        }
        if self.memory == 0 {
            return Err(ExecError::InvalidLimits("memory must be positive"));
        }
        if self.output_cap == 0 {
            return Err(ExecError::InvalidLimits("output_cap must be positive"));
        }
        if self.grace.is_zero() {
            return Err(ExecError::InvalidLimits("grace must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Tle,
    Re,
    Oom,
    OutputTruncated,
}

#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub status: RunStatus,
    pub stdout: String,
    pub stderr: String,
    pub duration: Duration,
    pub recursion_error: bool,
    pub exit_code: Option<i32>,
}

impl ExecutionOutcome {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// How the guest program is entered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    /// The program reads its input on stdin and writes the answer to stdout.
    Script,
    /// The program defines a function; a driver decodes a JSON argument list
    /// from stdin, calls it, and prints the JSON-encoded return value.
    Function(String),
}

const PYTHON_FUNCTION_DRIVER: &str = r#"import json as __oh_json
import sys as __oh_sys

{source}

if __name__ == "__main__":
    __oh_args = __oh_json.loads(__oh_sys.stdin.read())
    __oh_fn = globals().get("{function}")
    if __oh_fn is None and "Solution" in globals():
        __oh_fn = getattr(Solution(), "{function}")
    print(__oh_json.dumps(__oh_fn(*__oh_args)))
"#;

/// Guest runtime description. The guest language is configuration: the
/// command template, file extension and the stderr markers that identify
/// recursion-limit and out-of-memory failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Runtime {
    /// Argument vector; `{program}` is replaced by the program path.
    pub command: Vec<String>,
    pub extension: String,
    pub recursion_markers: Vec<String>,
    pub oom_markers: Vec<String>,
    /// Wrapper source for function-call entries, with `{source}` and
    /// `{function}` placeholders.
    pub function_driver: Option<String>,
    /// Environment variables passed through to the guest.
    pub env_allow: Vec<String>,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::python()
    }
}

impl Runtime {
    pub fn python() -> Self {
        Self {
            command: vec!["python3".into(), "-S".into(), "-B".into(), "{program}".into()],
            extension: "py".into(),
            recursion_markers: vec![
                "RecursionError".into(),
                "maximum recursion depth exceeded".into(),
            ],
            oom_markers: vec!["MemoryError".into()],
            function_driver: Some(PYTHON_FUNCTION_DRIVER.into()),
            env_allow: vec!["PATH".into(), "LANG".into(), "LC_ALL".into()],
        }
    }

    fn materialize(&self, source: &str, entry: &Entry) -> Result<String, ExecError> {
        match entry {
            Entry::Script => Ok(source.to_string()),
            Entry::Function(name) => {
                let driver = self.function_driver.as_ref().ok_or(ExecError::NoFunctionDriver)?;
                // {function} first so a literal "{function}" inside the
                // guest source is left alone.
                Ok(driver.replace("{function}", name).replacen("{source}", source, 1))
            }
        }
    }
}

fn kill_group(pgid: i32, signal: i32) {
    // SAFETY: plain syscall; ESRCH when the group is already gone is fine.
    unsafe {
        libc::killpg(pgid, signal);
    }
}

fn spawn_capture<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

/// Runs one guest program on one input.
pub fn run_program(
    source: &str,
    input: &str,
    limits: &ResourceLimits,
    runtime: &Runtime,
    entry: &Entry,
) -> Result<ExecutionOutcome, ExecError> {
    limits.validate()?;
    if !runtime.command.iter().any(|a| a.contains("{program}")) {
        return Err(ExecError::MissingPlaceholder);
    }
    let program_text = runtime.materialize(source, entry)?;

    let dir = tempfile::Builder::new().prefix("oh-run-").tempdir()?;
    let program_path = dir.path().join(format!("main.{}", runtime.extension));
    std::fs::write(&program_path, program_text)?;
    let program_str = program_path.to_string_lossy();
    let argv: Vec<String> = runtime
        .command
        .iter()
        .map(|a| a.replace("{program}", &program_str))
        .collect();

    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(dir.path())
        .env_clear()
        .env("HOME", dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for key in &runtime.env_allow {
        if let Ok(v) = std::env::var(key) {
            cmd.env(key, v);
        }
    }
    let memory = limits.memory;
    // SAFETY: only async-signal-safe setrlimit calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            let as_limit = libc::rlimit {
                rlim_cur: memory as libc::rlim_t,
                rlim_max: memory as libc::rlim_t,
            };
            libc::setrlimit(libc::RLIMIT_AS, &as_limit);
            let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            Ok(())
        });
    }

    let started = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ExecError::RuntimeUnavailable(argv[0].clone()))
        }
        Err(e) => return Err(ExecError::Io(e)),
    };
    let pgid = child.id() as i32;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let payload = input.as_bytes().to_vec();
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(&payload);
    });
    let out = spawn_capture(child.stdout.take().expect("stdout is piped"), limits.output_cap);
    let err = spawn_capture(child.stderr.take().expect("stderr is piped"), limits.output_cap);

    let mut terminated = false;
    let mut killed = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        let elapsed = started.elapsed();
        if !terminated && elapsed >= limits.wall_time {
            kill_group(pgid, libc::SIGTERM);
            terminated = true;
        }
        if !killed && elapsed >= limits.wall_time + limits.grace {
            kill_group(pgid, libc::SIGKILL);
            killed = true;
        }
        let poll = if elapsed < Duration::from_millis(50) { 1 } else { 5 };
        thread::sleep(Duration::from_millis(poll));
    };
    let duration = started.elapsed();
    kill_group(pgid, libc::SIGKILL);

    let _ = writer.join();
    let (stdout, stdout_truncated) = out.join().unwrap_or_default();
    let (stderr, _) = err.join().unwrap_or_default();
    let stdout = String::from_utf8_lossy(&stdout).into_owned();
    let stderr = String::from_utf8_lossy(&stderr).into_owned();

    let has = |markers: &[String]| markers.iter().any(|m| stderr.contains(m.as_str()));
    let failed = !status.success();
    let (status_kind, recursion_error) = if terminated || duration > limits.wall_time {
        (RunStatus::Tle, false)
    } else if failed && has(&runtime.oom_markers) {
        (RunStatus::Oom, false)
    } else if failed {
        (RunStatus::Re, has(&runtime.recursion_markers))
    } else if stdout_truncated {
        (RunStatus::OutputTruncated, false)
    } else {
        (RunStatus::Ok, false)
    };

    Ok(ExecutionOutcome {
        status: status_kind,
        stdout,
        stderr,
        duration,
        recursion_error,
        exit_code: status.code().or_else(|| status.signal().map(|s| -s)),
    })
}

/// Runs one program over many inputs; outcomes line up with `inputs`.
pub fn run_batch(
    source: &str,
    inputs: &[String],
    limits: &ResourceLimits,
    runtime: &Runtime,
    entry: &Entry,
    parallelism: usize,
) -> Result<Vec<ExecutionOutcome>, ExecError> {
    if parallelism == 0 {
        return Err(ExecError::InvalidLimits("parallelism must be at least 1"));
    }
    par_map(inputs, parallelism, |input| run_program(source, input, limits, runtime, entry))
        .into_iter()
        .collect()
}

/// A runtime plus a cap on concurrently running guest processes.
#[derive(Debug)]
pub struct Executor {
    runtime: Runtime,
    slots: Semaphore,
    parallelism: usize,
}

impl Executor {
    pub fn new(runtime: Runtime, parallelism: usize) -> Self {
        let parallelism = parallelism.max(1);
        Self {
            runtime,
            slots: Semaphore::new(parallelism),
            parallelism,
        }
    }

    /// Executor sized to the number of logical CPUs.
    pub fn with_default_parallelism(runtime: Runtime) -> Self {
        let n = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Self::new(runtime, n)
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn run(
        &self,
        source: &str,
        input: &str,
        limits: &ResourceLimits,
        entry: &Entry,
    ) -> Result<ExecutionOutcome, ExecError> {
        let _slot = self.slots.acquire();
        run_program(source, input, limits, &self.runtime, entry)
    }

    pub fn run_batch(
        &self,
        source: &str,
        inputs: &[String],
        limits: &ResourceLimits,
        entry: &Entry,
    ) -> Result<Vec<ExecutionOutcome>, ExecError> {
        par_map(inputs, self.parallelism, |input| self.run(source, input, limits, entry))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn limits(ms: u64) -> ResourceLimits {
        ResourceLimits::with_wall_time(Duration::from_millis(ms))
    }

    fn py(source: &str, input: &str, l: &ResourceLimits) -> ExecutionOutcome {
        run_program(source, input, l, &Runtime::python(), &Entry::Script).unwrap()
    }

    #[test]
    fn echo_program_is_ok() {
        let out = py("print(input())", "5\n", &limits(2000));
        assert_eq!(out.status, RunStatus::Ok);
        assert_eq!(out.stdout, "5\n");
    }

    #[test]
    fn sleeping_program_times_out_within_grace() {
        let l = limits(500).grace(Duration::from_secs(1));
        let started = Instant::now();
        let out = py("import time\ntime.sleep(4)", "", &l);
        assert_eq!(out.status, RunStatus::Tle);
        assert!(started.elapsed() <= Duration::from_millis(1800));
        assert!(out.duration <= l.wall_time + l.grace);
    }

    #[test]
    fn unbounded_recursion_is_flagged() {
        let out = py("def f(n):\n    return f(n + 1)\nf(0)", "", &limits(5000));
        assert_eq!(out.status, RunStatus::Re);
        assert!(out.recursion_error);
    }

    #[test]
    fn plain_crash_is_re_without_recursion_flag() {
        let out = py("raise ValueError('boom')", "", &limits(2000));
        assert_eq!(out.status, RunStatus::Re);
        assert!(!out.recursion_error);
        assert_eq!(out.exit_code, Some(1));
    }

    #[test]
    fn memory_cap_yields_oom() {
        let l = limits(5000).memory(256 * 1024 * 1024);
        let out = py("x = bytearray(1024 * 1024 * 1024)\nprint(len(x))", "", &l);
        assert_eq!(out.status, RunStatus::Oom, "stderr: {}", out.stderr);
    }

    #[test]
    fn output_cap_truncates() {
        let l = limits(5000).output_cap(1000);
        let out = py("print('x' * 5000)", "", &l);
        assert_eq!(out.status, RunStatus::OutputTruncated);
        assert_eq!(out.stdout.len(), 1000);
    }

    #[test]
    fn environment_is_scrubbed() {
        std::env::set_var("OH_SECRET_TEST_VAR", "leak");
        let out = py("import os\nprint(os.environ.get('OH_SECRET_TEST_VAR', 'none'))", "", &limits(2000));
        assert_eq!(out.stdout.trim(), "none");
    }

    #[test]
    fn function_entry_uses_driver() {
        let src = "class Solution:\n    def add(self, a, b):\n        return [a + b, a * b]\n";
        let out = run_program(src, "[2, 3]", &limits(2000), &Runtime::python(), &Entry::Function("add".into())).unwrap();
        assert_eq!(out.status, RunStatus::Ok, "{}", out.stderr);
        assert_eq!(out.stdout.trim(), "[5, 6]");
        let free = "def add(a, b):\n    return a + b\n";
        let out = run_program(free, "[2, 3]", &limits(2000), &Runtime::python(), &Entry::Function("add".into())).unwrap();
        assert_eq!(out.stdout.trim(), "5");
    }

    #[test]
    fn missing_interpreter_is_config_error() {
        let mut rt = Runtime::python();
        rt.command[0] = "definitely-not-an-interpreter-oh".into();
        let err = run_program("print(1)", "", &limits(1000), &rt, &Entry::Script).unwrap_err();
        assert!(matches!(err, ExecError::RuntimeUnavailable(_)));
    }

    #[test]
    fn zero_limits_rejected() {
        let l = limits(1000).memory(0);
        assert!(matches!(
            run_program("print(1)", "", &l, &Runtime::python(), &Entry::Script),
            Err(ExecError::InvalidLimits(_))
        ));
    }

    #[test]
    fn batch_alignment_and_parallel_equivalence() {
        let src = "import time\nx = int(input())\nif x == 3:\n    time.sleep(5)\nprint(x * x)";
        let inputs: Vec<String> = (1..=5).map(|i| format!("{i}\n")).collect();
        let l = limits(400);
        let rt = Runtime::python();
        let par = run_batch(src, &inputs, &l, &rt, &Entry::Script, 3).unwrap();
        let seq = run_batch(src, &inputs, &l, &rt, &Entry::Script, 1).unwrap();
        for (i, (p, s)) in par.iter().zip(&seq).enumerate() {
            if i == 2 {
                assert_eq!(p.status, RunStatus::Tle);
            } else {
                assert_eq!(p.status, RunStatus::Ok);
                assert_eq!(p.stdout, s.stdout);
            }
        }
        assert!(run_batch(src, &[], &l, &rt, &Entry::Script, 3).unwrap().is_empty());
    }
}
