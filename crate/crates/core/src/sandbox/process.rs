//! One child process with limits, a deadline and full cleanup.
//!
//! Linux/Unix only. The child gets an empty environment, its own process
//! group, an address-space cap, a CPU-time backstop and no core dumps. When
//! `isolate_network` is set it also tries to enter a fresh network namespace
//! (directly, then through a user namespace); if neither is permitted it runs
//! with the host network. Every run ends with SIGKILL to the whole group, so
//! helpers the program forked do not survive it.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{Limits, SandboxError};

/// Captured stream cap; anything beyond is read and dropped.
const CAPTURE_LIMIT: usize = 16 << 20;

#[derive(Debug)]
pub(crate) struct RawRun {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub status: Option<ExitStatus>,
    pub timed_out: bool,
    pub wall_ms: u64,
}

impl RawRun {
    pub fn success(&self) -> bool {
        !self.timed_out && self.status.is_some_and(|s| s.success())
    }
}

pub(crate) struct Spawn<'a> {
    pub program: &'a Path,
    pub args: &'a [String],
    pub cwd: &'a Path,
    pub stdin: &'a [u8],
    pub limits: Limits,
    pub isolate_network: bool,
}

pub(crate) fn run(spec: Spawn<'_>) -> Result<RawRun, SandboxError> {
    let mut cmd = Command::new(spec.program);
    cmd.args(spec.args)
        .current_dir(spec.cwd)
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mem_bytes = spec.limits.memory_mb.saturating_mul(1 << 20) as libc::rlim_t;
    let cpu_secs = (spec.limits.time_ms.div_ceil(1000) + 1) as libc::rlim_t;
    let isolate = spec.isolate_network;
    // SAFETY: the closure runs between fork and exec and only issues
    // async-signal-safe system calls.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            set_limit(libc::RLIMIT_AS, mem_bytes)?;
            set_limit(libc::RLIMIT_CPU, cpu_secs)?;
            set_limit(libc::RLIMIT_CORE, 0)?;
            if isolate {
                enter_network_namespace();
            }
            Ok(())
        });
    }
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SandboxError::InterpreterMissing(spec.program.display().to_string())
        } else {
            SandboxError::SandboxSetupFailure(format!("spawn {}: {e}", spec.program.display()))
        }
    })?;
    let pgid = child.id() as libc::pid_t;

    let mut stdin = child.stdin.take().expect("stdin is piped");
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let input = spec.stdin.to_vec();

    let (status, timed_out, out, err) = std::thread::scope(|scope| {
        // a child that never reads its input gets EPIPE here, which is fine
        scope.spawn(move || {
            let _ = stdin.write_all(&input);
        });
        let out = scope.spawn(move || capture(&mut stdout));
        let err = scope.spawn(move || capture(&mut stderr));
        let waited = child.wait_timeout(Duration::from_millis(spec.limits.time_ms));
        let (status, timed_out) = match waited {
            Ok(Some(status)) => (Some(status), false),
            Ok(None) => {
                kill_group(pgid);
                (child.wait().ok(), true)
            }
            Err(_) => {
                kill_group(pgid);
                (child.wait().ok(), false)
            }
        };
        // leftovers in the group would keep the pipes open
        kill_group(pgid);
        (status, timed_out, out.join().unwrap_or_default(), err.join().unwrap_or_default())
    });
    Ok(RawRun {
        stdout: out,
        stderr: err,
        status,
        timed_out,
        wall_ms: u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX),
    })
}

#[cfg(target_os = "linux")]
fn enter_network_namespace() {
    // SAFETY: unshare only affects the calling (forked, single-threaded) process.
    unsafe {
        if libc::unshare(libc::CLONE_NEWNET) != 0 {
            libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
        }
    }
}

#[cfg(not(target_os = "linux"))]
fn enter_network_namespace() {}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
type Resource = libc::__rlimit_resource_t;
#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
type Resource = libc::c_int;

fn set_limit(resource: Resource, value: libc::rlim_t) -> std::io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value,
        rlim_max: value,
    };
    // SAFETY: plain syscall on a stack value.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(std::io::Error::last_os_error());
    }
    Ok(())
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: signalling our own child's group; ESRCH is expected when it
    // is already gone.
    unsafe {
        libc::kill(-pgid, libc::SIGKILL);
    }
}

fn capture(r: &mut impl Read) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = CAPTURE_LIMIT.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    kept
}
