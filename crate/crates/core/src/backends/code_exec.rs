//! Sandboxed snippet execution: a python subprocess in isolated mode with
//! socket constructors poisoned, a wall-time limit, and output truncation.
//! This bounds model-written code far better than a bare interpreter call,
//! but it is a jail for accidents, not a security boundary against a
//! hostile snippet — run untrusted workloads in an external sandbox.

use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::{BackendError, BackendResponse, ExecResult, ExecStatus, ToolBackend};
use crate::types::{RawKnowledgeRecord, RecordSource};

#[derive(Debug, Clone, Copy)]
pub struct ExecLimits {
    pub wall_time: Duration,
    pub output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            wall_time: Duration::from_secs(5),
            output_bytes: 64 * 1024,
        }
    }
}

/// Prepended to every snippet. Poisoning the cached module object means a
/// later `import socket` inside the snippet sees the same disabled API.
const SANDBOX_PRELUDE: &str = concat!(
    "import socket as _sandbox_socket\n",
    "def _sandbox_no_net(*args, **kwargs):\n",
    "    raise OSError('network access is disabled in this sandbox')\n",
    "_sandbox_socket.socket = _sandbox_no_net\n",
    "_sandbox_socket.create_connection = _sandbox_no_net\n",
    "_sandbox_socket.getaddrinfo = _sandbox_no_net\n",
    "del _sandbox_socket\n",
    "del _sandbox_no_net\n",
);

/// Reads a pipe to EOF, keeping at most `cap` bytes. The pipe is always
/// drained so the child never blocks on a full buffer.
fn drain_capped(mut pipe: impl Read, cap: usize) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match pipe.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if kept.len() < cap {
                    let take = (cap - kept.len()).min(n);
                    kept.extend_from_slice(&buf[..take]);
                }
            }
        }
    }
    kept
}

/// Executes `snippet` in the sandbox. Timeouts report how long the
/// process actually ran, which is at least the configured limit.
pub fn code_exec(snippet: &str, limits: &ExecLimits) -> Result<ExecResult, BackendError> {
    if snippet.trim().is_empty() {
        return Err(BackendError::InvalidArgument("snippet is empty".into()));
    }
    let program = format!("{SANDBOX_PRELUDE}{snippet}");
    let started = Instant::now();
    let mut child = Command::new("python3")
        .arg("-I")
        .arg("-c")
        .arg(&program)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| BackendError::SandboxUnavailable(format!("cannot start python3: {e}")))?;

    let stdout_pipe = child.stdout.take().expect("stdout piped");
    let stderr_pipe = child.stderr.take().expect("stderr piped");
    let cap = limits.output_bytes;
    let stdout_thread = std::thread::spawn(move || drain_capped(stdout_pipe, cap));
    let stderr_thread = std::thread::spawn(move || drain_capped(stderr_pipe, cap));

    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {
                if started.elapsed() >= limits.wall_time {
                    timed_out = true;
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                let _ = child.kill();
                return Err(BackendError::Other(format!("wait failed: {e}")));
            }
        }
    };

    let stdout = String::from_utf8_lossy(&stdout_thread.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&stderr_thread.join().unwrap_or_default()).into_owned();
    let wall_time = started.elapsed();

    let exit_status = if timed_out {
        ExecStatus::Timeout
    } else if status.map(|s| s.success()).unwrap_or(false) {
        ExecStatus::Ok
    } else {
        ExecStatus::Error
    };
    Ok(ExecResult {
        stdout,
        stderr,
        exit_status,
        wall_time,
    })
}

/// Registry adapter. Executions are serialized by default so model code
/// cannot saturate the host; disable via `serialize` for trusted runs.
pub struct CodeExecBackend {
    limits: ExecLimits,
    serialize: bool,
    gate: Mutex<()>,
}

impl CodeExecBackend {
    pub fn new(limits: ExecLimits) -> Self {
        CodeExecBackend {
            limits,
            serialize: true,
            gate: Mutex::new(()),
        }
    }

    pub fn with_serialization(mut self, serialize: bool) -> Self {
        self.serialize = serialize;
        self
    }
}

impl ToolBackend for CodeExecBackend {
    fn invoke(
        &self,
        argument: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError> {
        let _guard = if self.serialize {
            Some(self.gate.lock().unwrap_or_else(|e| e.into_inner()))
        } else {
            None
        };
        let result = code_exec(argument, &self.limits)?;
        let content = match result.exit_status {
            ExecStatus::Ok => result.stdout.clone(),
            ExecStatus::Error => format!("execution error:\n{}", result.stderr),
            ExecStatus::Timeout => "execution timed out".to_string(),
        };
        let record = RawKnowledgeRecord::new(
            RecordSource::CodeExecution {
                label: format!("{task_id}/help{help_index}"),
            },
            content,
            task_id,
            help_index,
        );
        let mut notes = Vec::new();
        if result.exit_status != ExecStatus::Ok {
            notes.push(format!("code_exec finished with {:?}", result.exit_status));
        }
        Ok(BackendResponse {
            records: vec![record],
            notes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_prints_expected_value() {
        let result = code_exec("print(275*0.92)", &ExecLimits::default()).unwrap();
        assert_eq!(result.exit_status, ExecStatus::Ok);
        assert!(
            result.stdout.starts_with("253.0"),
            "got {:?}",
            result.stdout
        );
    }

    #[test]
    fn simple_sum_round_trips() {
        let result = code_exec("print(2+2)", &ExecLimits::default()).unwrap();
        assert_eq!(result.stdout.trim(), "4");
    }

    #[test]
    fn infinite_loop_times_out() {
        let limits = ExecLimits {
            wall_time: Duration::from_millis(300),
            output_bytes: 1024,
        };
        let result = code_exec("while True: pass", &limits).unwrap();
        assert_eq!(result.exit_status, ExecStatus::Timeout);
        assert!(result.wall_time >= limits.wall_time);
    }

    #[test]
    fn division_by_zero_reports_error_with_stderr() {
        let result = code_exec("print(1/0)", &ExecLimits::default()).unwrap();
        assert_eq!(result.exit_status, ExecStatus::Error);
        assert!(!result.stderr.is_empty());
    }

    #[test]
    fn empty_snippet_is_a_precondition_error() {
        assert!(code_exec("  ", &ExecLimits::default()).is_err());
    }

    #[test]
    fn network_access_is_blocked() {
        // Probe both the direct module object and a fresh import.
        let snippet = concat!(
            "import socket\n",
            "try:\n",
            "    socket.socket()\n",
            "    print('OPEN')\n",
            "except OSError as e:\n",
            "    raise SystemExit('blocked: ' + str(e))\n",
        );
        let result = code_exec(snippet, &ExecLimits::default()).unwrap();
        assert_eq!(result.exit_status, ExecStatus::Error);
        assert!(result.stderr.contains("blocked"));
        assert!(!result.stdout.contains("OPEN"));
    }

    #[test]
    fn output_is_truncated_to_cap() {
        let limits = ExecLimits {
            wall_time: Duration::from_secs(5),
            output_bytes: 100,
        };
        let result = code_exec("print('x' * 10000)", &limits).unwrap();
        assert!(result.stdout.len() <= 100);
    }
}
