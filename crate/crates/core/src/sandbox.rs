//! Isolated execution of generated scripts.
//!
//! Each script runs as a child interpreter process in its own process group.
//! A Landlock domain installed between fork and exec leaves the filesystem
//! readable but only the work directory writable and stops the child from
//! signalling processes outside its domain. Strict mode also denies TCP.
//! Wall time is bounded by killing the whole process group.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use landlock::{
    path_beneath_rules, Access, AccessFs, AccessNet, CompatLevel, Compatible, Ruleset, RulesetAttr, RulesetCreated,
    RulesetCreatedAttr, RulesetStatus, Scope, ABI,
};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
pub const DEFAULT_OUTPUT_CAP: usize = 1 << 20;
pub const INTERPRETER_ENV: &str = "LADS_INTERPRETER";
pub const ISOLATION_ENV: &str = "LADS_SANDBOX_ISOLATION";
/// Scratch directory inside the work directory, excluded from `files_created`.
pub const SCRATCH_DIR: &str = ".tmp";

const LANDLOCK_ABI: ABI = ABI::V6;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("work directory {0} does not exist")]
    MissingWorkdir(PathBuf),
    #[error("cannot start interpreter `{interpreter}`: {source}")]
    Spawn {
        interpreter: String,
        #[source]
        source: io::Error,
    },
    #[error("isolation setup failed: {0}")]
    Isolation(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Isolation {
    /// Filesystem writes confined to the work directory; network allowed.
    #[default]
    Confined,
    /// As `Confined`, and TCP bind/connect denied.
    Strict,
    /// No confinement at all. Only for debugging.
    Disabled,
}

impl FromStr for Isolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "confined" => Ok(Self::Confined),
            "strict" => Ok(Self::Strict),
            "disabled" | "off" => Ok(Self::Disabled),
            other => Err(format!("unknown isolation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub timeout: Duration,
    pub output_cap: usize,
    pub isolation: Isolation,
    pub env: BTreeMap<String, String>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: std::env::var(INTERPRETER_ENV).unwrap_or_else(|_| "python3".into()),
            timeout: DEFAULT_TIMEOUT,
            output_cap: DEFAULT_OUTPUT_CAP,
            isolation: std::env::var(ISOLATION_ENV)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or_default(),
            env: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub duration: Duration,
    pub metrics: BTreeMap<String, f64>,
    /// Paths relative to the work directory that did not exist before the run.
    pub files_created: Vec<PathBuf>,
}

impl ExecutionResult {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }

    /// Text handed to the repair prompt: stderr, or a timeout notice.
    pub fn failure_message(&self) -> String {
        if self.timed_out {
            format!(
                "Execution exceeded the time limit of {:.0} seconds and was terminated.",
                self.duration.as_secs_f64().floor()
            )
        } else if let Some(sig) = self.signal {
            format!("{}\nProcess terminated by signal {sig}.", self.stderr.trim_end())
        } else {
            self.stderr.clone()
        }
    }
}

fn metric_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^LADS_METRIC ([A-Za-z0-9_-]+)=(-?[0-9]+(?:\.[0-9]+)?)$").unwrap())
}

/// Formats one metric line in the grammar `parse_metrics` accepts.
pub fn metric_emission(name: &str, value: f64) -> String {
    format!("LADS_METRIC {name}={value:.12}")
}

/// Extracts `LADS_METRIC <name>=<decimal>` lines. A repeated name keeps its
/// last value.
pub fn parse_metrics(stdout: &str) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for line in stdout.lines() {
        let line = line.trim_end_matches(['\r', ' ', '\t']);
        if let Some(c) = metric_line().captures(line) {
            if let Ok(v) = c[2].parse::<f64>() {
                out.insert(c[1].to_string(), v);
            }
        }
    }
    out
}

/// Whether the running kernel enforces the confinement rules.
pub fn landlock_status() -> RulesetStatus {
    static STATUS: OnceLock<u8> = OnceLock::new();
    let code = *STATUS.get_or_init(|| {
        // Landlock domains are per-thread; probing on a throwaway thread
        // leaves the caller unrestricted.
        thread::spawn(|| {
            let status = Ruleset::default()
                .handle_access(AccessFs::from_all(ABI::V1))
                .and_then(|r| r.create())
                .and_then(|r| r.restrict_self())
                .map(|s| s.ruleset)
                .unwrap_or(RulesetStatus::NotEnforced);
            match status {
                RulesetStatus::FullyEnforced => 2,
                RulesetStatus::PartiallyEnforced => 1,
                _ => 0,
            }
        })
        .join()
        .unwrap_or(0)
    });
    match code {
        2 => RulesetStatus::FullyEnforced,
        1 => RulesetStatus::PartiallyEnforced,
        _ => RulesetStatus::NotEnforced,
    }
}

/// Digest over the names and contents of every file below `root`.
pub fn tree_digest(root: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    let mut entries: Vec<_> = WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(io::Error::other)?;
    entries.sort_by(|a, b| a.path().cmp(b.path()));
    for e in entries {
        let rel = e.path().strip_prefix(root).unwrap_or(e.path());
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        let ft = e.file_type();
        if ft.is_file() {
            hasher.update(b"f");
            hasher.update(std::fs::read(e.path())?);
        } else if ft.is_symlink() {
            hasher.update(b"l");
            hasher.update(std::fs::read_link(e.path())?.to_string_lossy().as_bytes());
        } else {
            hasher.update(b"d");
        }
        hasher.update([0u8]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn snapshot(root: &Path) -> BTreeSet<PathBuf> {
    WalkDir::new(root)
        .follow_links(false)
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| e.depth() != 1 || e.file_name() != SCRATCH_DIR)
        .filter_map(Result::ok)
        .filter(|e| !e.file_type().is_dir())
        .filter_map(|e| e.path().strip_prefix(root).ok().map(Path::to_path_buf))
        .collect()
}

fn build_ruleset(workdir: &Path, isolation: Isolation) -> Result<Option<RulesetCreated>, SandboxError> {
    if isolation == Isolation::Disabled {
        return Ok(None);
    }
    let err = |e: landlock::RulesetError| SandboxError::Isolation(e.to_string());
    let mut ruleset = Ruleset::default()
        .set_compatibility(CompatLevel::BestEffort)
        .handle_access(AccessFs::from_all(LANDLOCK_ABI))
        .map_err(err)?
        .scope(Scope::Signal | Scope::AbstractUnixSocket)
        .map_err(err)?;
    if isolation == Isolation::Strict {
        ruleset = ruleset.handle_access(AccessNet::from_all(LANDLOCK_ABI)).map_err(err)?;
    }
    let writable: Vec<PathBuf> = [workdir, Path::new("/dev/null"), Path::new("/dev/shm")]
        .into_iter()
        .filter(|p| p.exists())
        .map(Path::to_path_buf)
        .collect();
    let created = ruleset
        .create()
        .map_err(err)?
        .add_rules(path_beneath_rules(["/"], AccessFs::from_read(LANDLOCK_ABI)))
        .map_err(err)?
        .add_rules(path_beneath_rules(&writable, AccessFs::from_all(LANDLOCK_ABI)))
        .map_err(err)?;
    Ok(Some(created))
}

// Landlock does not mediate mode, owner, timestamp or xattr changes. A
// seccomp filter turns those syscalls into successful no-ops so scripts that
// copy files with `shutil.copy` keep working.
#[cfg(target_arch = "x86_64")]
const AUDIT_ARCH: u32 = 0xC000_003E;
#[cfg(target_arch = "aarch64")]
const AUDIT_ARCH: u32 = 0xC000_00B7;
const SYS_FCHMODAT2: libc::c_long = 452;

#[cfg(target_arch = "x86_64")]
const METADATA_SYSCALLS: &[libc::c_long] = &[
    libc::SYS_chmod,
    libc::SYS_fchmod,
    libc::SYS_fchmodat,
    SYS_FCHMODAT2,
    libc::SYS_chown,
    libc::SYS_fchown,
    libc::SYS_lchown,
    libc::SYS_fchownat,
    libc::SYS_utime,
    libc::SYS_utimes,
    libc::SYS_futimesat,
    libc::SYS_utimensat,
    libc::SYS_setxattr,
    libc::SYS_lsetxattr,
    libc::SYS_fsetxattr,
    libc::SYS_removexattr,
    libc::SYS_lremovexattr,
    libc::SYS_fremovexattr,
];
#[cfg(target_arch = "aarch64")]
const METADATA_SYSCALLS: &[libc::c_long] = &[
    libc::SYS_fchmod,
    libc::SYS_fchmodat,
    SYS_FCHMODAT2,
    libc::SYS_fchown,
    libc::SYS_fchownat,
    libc::SYS_utimensat,
    libc::SYS_setxattr,
    libc::SYS_lsetxattr,
    libc::SYS_fsetxattr,
    libc::SYS_removexattr,
    libc::SYS_lremovexattr,
    libc::SYS_fremovexattr,
];

fn bpf(code: u16, jt: u8, jf: u8, k: u32) -> libc::sock_filter {
    libc::sock_filter { code, jt, jf, k }
}

/// Classic BPF program returning 0 for the metadata syscalls.
fn metadata_filter() -> Vec<libc::sock_filter> {
    const LD_ABS: u16 = 0x20;
    const JEQ: u16 = 0x15;
    const RET: u16 = 0x06;
    let n = METADATA_SYSCALLS.len();
    let mut prog = vec![
        bpf(LD_ABS, 0, 0, 4),
        bpf(JEQ, 0, (n + 1) as u8, AUDIT_ARCH),
        bpf(LD_ABS, 0, 0, 0),
    ];
    for (i, nr) in METADATA_SYSCALLS.iter().enumerate() {
        prog.push(bpf(JEQ, (n - i) as u8, 0, *nr as u32));
    }
    prog.push(bpf(RET, 0, 0, libc::SECCOMP_RET_ALLOW));
    prog.push(bpf(RET, 0, 0, libc::SECCOMP_RET_ERRNO));
    prog
}

/// Runs in the forked child; async-signal-safe.
fn install_filter(prog: &[libc::sock_filter]) -> io::Result<()> {
    let fprog = libc::sock_fprog {
        len: prog.len() as u16,
        filter: prog.as_ptr() as *mut libc::sock_filter,
    };
    // SAFETY: plain prctl calls; `fprog` points into `prog`, alive for the call.
    unsafe {
        if libc::prctl(libc::PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 {
            return Err(io::Error::last_os_error());
        }
        if libc::prctl(
            libc::PR_SET_SECCOMP,
            libc::SECCOMP_MODE_FILTER as libc::c_ulong,
            &fprog as *const libc::sock_fprog,
        ) != 0
        {
            return Err(io::Error::last_os_error());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    pub config: SandboxConfig,
}

struct Captured {
    text: String,
}

fn spawn_reader<R: Read + Send + 'static>(mut src: R, cap: usize) -> mpsc::Receiver<Captured> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut dropped = 0usize;
        let mut buf = [0u8; 8192];
        loop {
            match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                    dropped += n.saturating_sub(room);
                }
            }
        }
        let mut text = String::from_utf8_lossy(&kept).into_owned();
        if dropped > 0 {
            text.push_str(&format!("\n[output truncated: {dropped} bytes omitted]\n"));
        }
        let _ = tx.send(Captured { text });
    });
    rx
}

fn kill_group(child: &Child) {
    // Negative pid addresses the process group created with process_group(0).
    unsafe {
        libc::kill(-(child.id() as i32), libc::SIGKILL);
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.config.timeout = timeout;
        self
    }

    /// Runs `script` (a path relative to or inside `workdir`) with `args`.
    pub fn execute(&self, workdir: &Path, script: &Path, args: &[&str]) -> Result<ExecutionResult, SandboxError> {
        if !workdir.is_dir() {
            return Err(SandboxError::MissingWorkdir(workdir.to_path_buf()));
        }
        let workdir = workdir.canonicalize()?;
        let scratch = workdir.join(SCRATCH_DIR);
        std::fs::create_dir_all(&scratch)?;
        let before = snapshot(&workdir);

        let mut cmd = Command::new(&self.config.interpreter);
        cmd.arg("-u").arg(script).args(args);
        cmd.current_dir(&workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .process_group(0);
        let path = std::env::var_os("PATH").unwrap_or_else(|| OsString::from("/usr/local/bin:/usr/bin:/bin"));
        cmd.env("PATH", path)
            .env("HOME", &workdir)
            .env("TMPDIR", &scratch)
            .env("MPLCONFIGDIR", &scratch)
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONIOENCODING", "utf-8");
        for (k, v) in &self.config.env {
            cmd.env(k, v);
        }

        let mut ruleset = build_ruleset(&workdir, self.config.isolation)?;
        let filter = (self.config.isolation != Isolation::Disabled).then(metadata_filter);
        // SAFETY: the closure only performs raw system calls; the ruleset was
        // fully built before fork.
        unsafe {
            cmd.pre_exec(move || {
                libc::prctl(libc::PR_SET_PDEATHSIG, libc::SIGKILL as libc::c_ulong);
                let core = libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                };
                libc::setrlimit(libc::RLIMIT_CORE, &core);
                if let Some(r) = ruleset.take() {
                    if r.restrict_self().is_err() {
                        return Err(io::Error::from_raw_os_error(libc::EPERM));
                    }
                }
                if let Some(prog) = &filter {
                    install_filter(prog)?;
                }
                Ok(())
            });
        }

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::Spawn {
            interpreter: self.config.interpreter.clone(),
            source,
        })?;
        let out_rx = spawn_reader(child.stdout.take().expect("piped stdout"), self.config.output_cap);
        let err_rx = spawn_reader(child.stderr.take().expect("piped stderr"), self.config.output_cap);

        let deadline = start + self.config.timeout;
        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break status;
            }
            if Instant::now() >= deadline {
                timed_out = true;
                kill_group(&child);
                break child.wait()?;
            }
            thread::sleep(Duration::from_millis(5));
        };
        // Reap stragglers that inherited the group but outlived the leader.
        kill_group(&child);
        let duration = start.elapsed();

        // Escaped descendants can hold the pipes open; both readers share one
        // grace deadline.
        let grace_end = Instant::now() + Duration::from_millis(if timed_out { 300 } else { 2000 });
        let recv = |rx: &mpsc::Receiver<Captured>| {
            rx.recv_timeout(grace_end.saturating_duration_since(Instant::now()))
                .map(|c| c.text)
                .unwrap_or_default()
        };
        let stdout = recv(&out_rx);
        let stderr = recv(&err_rx);

        let after = snapshot(&workdir);
        let files_created = after.difference(&before).cloned().collect();
        let metrics = if timed_out {
            BTreeMap::new()
        } else {
            parse_metrics(&stdout)
        };
        let result = ExecutionResult {
            exit_code: status.code(),
            signal: status.signal(),
            stdout,
            stderr,
            timed_out,
            duration,
            metrics,
            files_created,
        };
        tracing::debug!(
            script = %script.display(),
            exit = ?result.exit_code,
            timed_out,
            secs = duration.as_secs_f64(),
            "sandbox run finished"
        );
        Ok(result)
    }

    /// Writes `code` to `workdir/<file_name>` and runs it.
    pub fn execute_code(&self, workdir: &Path, file_name: &str, code: &str) -> Result<ExecutionResult, SandboxError> {
        std::fs::write(workdir.join(file_name), code)?;
        self.execute(workdir, Path::new(file_name), &[])
    }
}
