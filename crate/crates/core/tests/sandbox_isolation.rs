mod common;

use std::collections::BTreeMap;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lads_core::sandbox::{landlock_status, parse_metrics};
use landlock::RulesetStatus;

/// Names, modes and contents of everything below `root`, collected without
/// the library's own digest.
fn inventory(root: &Path) -> BTreeMap<PathBuf, (u32, Vec<u8>)> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let meta = std::fs::symlink_metadata(&path).unwrap();
            let body = if meta.is_file() {
                std::fs::read(&path).unwrap()
            } else {
                Vec::new()
            };
            out.insert(
                path.strip_prefix(root).unwrap().to_path_buf(),
                (meta.permissions().mode(), body),
            );
            if meta.is_dir() {
                stack.push(path);
            }
        }
    }
    out
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    sentinel: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().canonicalize().unwrap();
    let sentinel = root.join("sentinel");
    std::fs::create_dir_all(sentinel.join("nested")).unwrap();
    std::fs::write(sentinel.join("secret.txt"), "do not touch\n").unwrap();
    std::fs::write(sentinel.join("nested/deep.txt"), "deep\n").unwrap();
    std::os::unix::fs::symlink(&sentinel, root.join("alias")).unwrap();
    Fixture {
        _tmp: tmp,
        root,
        sentinel,
    }
}

fn attacks(target: &str) -> Vec<String> {
    let t = format!("{target:?}");
    vec![
        format!("open({t}, 'w').write('pwned')"),
        format!("open({t}, 'a').write('pwned')"),
        format!("import os\nos.remove({t})"),
        format!("import os\nos.rename({t}, 'stolen.txt')"),
        format!("import os, shutil\nshutil.rmtree(os.path.dirname({t}))"),
        format!("import os\nos.chmod({t}, 0o777)"),
        format!("import os\nos.symlink({t}, 'link')\nopen('link', 'w').write('pwned')"),
        format!("import os\nos.link({t}, 'hard')\nopen('hard', 'w').write('pwned')"),
        format!("import subprocess\nsubprocess.run(['sh', '-c', 'echo pwned > ' + {t}])"),
        format!(
            "import os, time\nif os.fork() == 0:\n    os.setsid()\n    time.sleep(0.3)\n    \
             open(os.path.join(os.path.dirname({t}), 'planted.txt'), 'w').write('x')\n    os._exit(0)"
        ),
    ]
}

#[test]
fn fifty_adversarial_scripts_leave_the_sentinel_unchanged() {
    assert_ne!(
        landlock_status(),
        RulesetStatus::NotEnforced,
        "kernel does not enforce confinement"
    );
    let fx = fixture();
    let sandbox = common::sandbox(Duration::from_secs(10));
    let before = inventory(&fx.sentinel);
    let targets = [
        fx.sentinel.join("secret.txt").display().to_string(),
        fx.sentinel.join("nested/deep.txt").display().to_string(),
        "../../sentinel/secret.txt".to_string(),
        "/proc/self/cwd/../../sentinel/nested/deep.txt".to_string(),
        fx.root.join("alias/secret.txt").display().to_string(),
    ];
    let mut count = 0;
    for (ti, target) in targets.iter().enumerate() {
        for (ai, script) in attacks(target).into_iter().enumerate() {
            let workdir = fx.root.join("work").join(format!("t{ti}-a{ai}"));
            std::fs::create_dir_all(&workdir).unwrap();
            sandbox.execute_code(&workdir, "attack.py", &script).unwrap();
            count += 1;
        }
    }
    assert_eq!(count, 50);
    // Let forked stragglers finish their delayed writes.
    std::thread::sleep(Duration::from_millis(800));
    assert_eq!(inventory(&fx.sentinel), before);
}

#[test]
fn writes_inside_the_workdir_are_allowed_and_reported() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let r = common::sandbox(Duration::from_secs(10))
        .execute_code(
            &workdir,
            "ok.py",
            "import os\nos.makedirs('out')\nopen('out/a.txt','w').write('1')\nprint('hi')",
        )
        .unwrap();
    assert!(r.success(), "{}", r.stderr);
    assert_eq!(r.stdout.trim(), "hi");
    assert!(r.files_created.contains(&PathBuf::from("out/a.txt")));
}

#[test]
fn busy_loop_is_killed_within_one_second_of_the_limit() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let limit = Duration::from_secs(2);
    let started = Instant::now();
    let r = common::sandbox(limit)
        .execute_code(&workdir, "spin.py", "while True:\n    pass\n")
        .unwrap();
    let elapsed = started.elapsed();
    assert!(r.timed_out);
    assert!(!r.success());
    assert!(elapsed >= limit);
    assert!(elapsed <= limit + Duration::from_secs(1), "{elapsed:?}");
}

#[test]
fn timeout_kills_the_whole_process_group() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let limit = Duration::from_secs(1);
    let script = "import subprocess, time\np = subprocess.Popen(['sleep', '60'])\n\
                  open('child.pid', 'w').write(str(p.pid))\ntime.sleep(60)\n";
    let started = Instant::now();
    let r = common::sandbox(limit)
        .execute_code(&workdir, "tree.py", script)
        .unwrap();
    assert!(r.timed_out);
    assert!(started.elapsed() <= limit + Duration::from_secs(1));
    let pid = std::fs::read_to_string(workdir.join("child.pid")).unwrap();
    std::thread::sleep(Duration::from_millis(200));
    let alive = std::fs::read_to_string(format!("/proc/{}/stat", pid.trim()))
        .map(|s| !s.contains(") Z "))
        .unwrap_or(false);
    assert!(!alive, "grandchild {pid} survived the timeout");
}

#[test]
fn escaped_session_does_not_hold_the_caller() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let limit = Duration::from_secs(1);
    let script =
        "import os, time\nif os.fork() == 0:\n    os.setsid()\n    time.sleep(30)\n    os._exit(0)\ntime.sleep(60)\n";
    let started = Instant::now();
    let r = common::sandbox(limit)
        .execute_code(&workdir, "escape.py", script)
        .unwrap();
    assert!(r.timed_out);
    assert!(
        started.elapsed() <= limit + Duration::from_secs(1),
        "{:?}",
        started.elapsed()
    );
}

#[test]
fn metric_grammar_matches_golden_output() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let stdout = std::fs::read_to_string(dir.join("metric_stdout.txt")).unwrap();
    let expected: BTreeMap<String, f64> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metric_expected.json")).unwrap()).unwrap();
    assert_eq!(parse_metrics(&stdout), expected);
}

#[test]
fn metric_lines_printed_by_a_script_are_collected() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/metric_stdout.txt");
    std::fs::copy(&golden, workdir.join("lines.txt")).unwrap();
    let r = common::sandbox(Duration::from_secs(10))
        .execute_code(
            &workdir,
            "emit.py",
            "import sys\nsys.stdout.write(open('lines.txt', newline='').read())",
        )
        .unwrap();
    let expected: BTreeMap<String, f64> =
        serde_json::from_str(&std::fs::read_to_string(golden.with_file_name("metric_expected.json")).unwrap()).unwrap();
    assert_eq!(r.metrics, expected);
}

#[test]
fn metadata_calls_are_inert_but_do_not_fail() {
    let fx = fixture();
    let workdir = fx.root.join("work");
    std::fs::create_dir_all(&workdir).unwrap();
    let script = "import os, shutil\nopen('a.txt', 'w').write('1')\nshutil.copy('a.txt', 'b.txt')\n\
                  os.chmod('a.txt', 0o600)\nprint(oct(os.stat('a.txt').st_mode & 0o777))";
    let r = common::sandbox(Duration::from_secs(10))
        .execute_code(&workdir, "copy.py", script)
        .unwrap();
    assert!(r.success(), "{}", r.stderr);
    assert_eq!(std::fs::read_to_string(workdir.join("b.txt")).unwrap(), "1");
    assert_ne!(r.stdout.trim(), "0o600");
}
