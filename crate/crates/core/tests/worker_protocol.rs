//! Drives `WorkerBackend` against a scripted stand-in worker.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tritonjudge_core::exec::{
    judge, BackendError, DType, Distribution, ExecutionBackend, JobInput, JobMode, JudgeError, JudgeOptions,
    ProtocolError, ReferenceKind, TensorSpec, WorkerBackend, WorkerConfig, WorkerJob,
};
use tritonjudge_core::{Channel, ExecStatus, KernelTask, SourceUnit, TestCase};

// Replies are chosen by markers in the job source. The process id goes back
// in `compiler_version` so tests can see respawns.
const WORKER: &str = r#"#!/usr/bin/env python3
import base64, json, os, struct, sys, time

device = sys.argv[sys.argv.index("--device") + 1] if "--device" in sys.argv else "cuda:0"
ONE_TWO = base64.b64encode(struct.pack("<2f", 1.0, 2.0)).decode()

for line in sys.stdin:
    if not line.strip():
        continue
    try:
        job = json.loads(line)
    except ValueError:
        print(json.dumps({"v": 1, "job_id": None, "ok": False, "error": "malformed request"}), flush=True)
        continue
    src, jid = job["source"], job["job_id"]
    reply = {"v": 1, "job_id": jid, "ok": True, "outputs": [], "compiler_version": str(os.getpid())}
    if device == "none":
        reply.update(ok=False, stage="exec", error="no-gpu")
    elif "HANG" in src:
        time.sleep(3600)
    elif "DIE" in src:
        sys.exit(1)
    elif "OLDPROTO" in src:
        reply["v"] = 0
    elif "WRONGID" in src:
        reply["job_id"] = "someone-else"
    elif "GARBAGE" in src:
        print("this is not json", flush=True)
        continue
    elif "RAISE" in src:
        reply.update(ok=False, stage="call", error="RuntimeError: boom")
    elif job["mode"] == "time":
        reply["time_ns"] = 2000 if "REFERENCE" in src else 500
    else:
        reply["outputs"] = [{"shape": [2], "dtype": "f32", "data_b64": ONE_TWO}]
    print(json.dumps(reply), flush=True)
"#;

fn python_available() -> bool {
    Command::new("python3")
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success())
}

fn worker_script(dir: &Path) -> PathBuf {
    let path = dir.join("worker.py");
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(WORKER.as_bytes()).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
    path
}

fn backend(dir: &Path, device: &str) -> WorkerBackend {
    WorkerBackend::new(WorkerConfig::new(worker_script(dir), device, 5)).unwrap()
}

fn job(id: &str, source: &str, timeout_s: f64) -> WorkerJob {
    let case = TestCase::new(
        "c0",
        1,
        vec![TensorSpec::new(vec![2], DType::F32, Distribution::Arange)],
    );
    WorkerJob::new(
        id,
        JobMode::RunCandidate,
        source,
        "f",
        JobInput::from_case(&case),
        timeout_s,
    )
}

macro_rules! require_python {
    () => {
        if !python_available() {
            eprintln!("python3 not found; stand-in worker tests skipped");
            return;
        }
    };
}

#[test]
fn missing_program_is_unavailable() {
    let err = WorkerBackend::new(WorkerConfig::new("/no/such/worker", "cuda:0", 5))
        .err()
        .unwrap();
    assert!(matches!(err, BackendError::Unavailable(_)));
}

#[test]
fn round_trip_and_failure_reply() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "cuda:0");
    let ok = b.submit(&job("j1", "def f(x): ...", 5.0)).unwrap();
    assert!(ok.ok);
    assert_eq!(ok.outputs[0].decode().unwrap().data, vec![1.0, 2.0]);
    let raised = b.submit(&job("j2", "RAISE", 5.0)).unwrap();
    assert!(!raised.ok);
    assert_eq!(raised.error.as_deref(), Some("RuntimeError: boom"));
    // one process served both jobs
    assert_eq!(ok.compiler_version, raised.compiler_version);
}

#[test]
fn protocol_violations_are_reported() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "cuda:0");
    let err = b.submit(&job("j1", "OLDPROTO", 5.0)).unwrap_err();
    assert!(
        matches!(
            err,
            BackendError::Protocol(ProtocolError::Version { got: 0, expected: 1 })
        ),
        "{err}"
    );
    let err = b.submit(&job("j2", "WRONGID", 5.0)).unwrap_err();
    assert!(
        matches!(err, BackendError::Protocol(ProtocolError::JobIdMismatch { .. })),
        "{err}"
    );
    let err = b.submit(&job("j3", "GARBAGE", 5.0)).unwrap_err();
    assert!(
        matches!(err, BackendError::Protocol(ProtocolError::Malformed(_))),
        "{err}"
    );
}

#[test]
fn hung_worker_times_out_and_respawns() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "cuda:0");
    let before = b.submit(&job("j0", "fine", 5.0)).unwrap().compiler_version;
    let start = Instant::now();
    let err = b.submit(&job("j1", "HANG", 0.0)).unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err}");
    assert!(start.elapsed().as_secs_f64() < 30.0);
    let after = b.submit(&job("j2", "fine", 5.0)).unwrap().compiler_version;
    assert_ne!(before, after, "worker was not respawned");
}

#[test]
fn dead_worker_is_unavailable_then_respawns() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "cuda:0");
    let err = b.submit(&job("j1", "DIE", 5.0)).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err}");
    assert!(b.submit(&job("j2", "fine", 5.0)).unwrap().ok);
}

fn task() -> KernelTask {
    KernelTask {
        task_id: "w".into(),
        instruction: "identity".into(),
        reference_source: SourceUnit::new("ref.py", "# REFERENCE\ndef f(x):\n    return x\n"),
        reference_kind: ReferenceKind::HostTensor,
        test_cases: vec![TestCase::new(
            "c0",
            1,
            vec![TensorSpec::new(vec![2], DType::F32, Distribution::Arange)],
        )],
        channel: Channel::TbT,
        entry_names: vec!["f".into()],
    }
}

#[test]
fn judge_through_worker() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "cuda:0");
    let v = judge(
        &task(),
        &SourceUnit::new("c", "def f(x): ..."),
        &mut b,
        &JudgeOptions::default(),
    )
    .unwrap();
    assert_eq!(v.status, ExecStatus::Pass);
    assert_eq!((v.baseline_time_ns, v.candidate_time_ns), (Some(2000), Some(500)));
    assert_eq!(v.speedup, Some(4.0));
    let v = judge(
        &task(),
        &SourceUnit::new("c", "RAISE"),
        &mut b,
        &JudgeOptions::default(),
    )
    .unwrap();
    assert_eq!(v.status, ExecStatus::CallError);
}

#[test]
fn no_gpu_host_is_an_infrastructure_error() {
    require_python!();
    let dir = tempfile::tempdir().unwrap();
    let mut b = backend(dir.path(), "none");
    let err = judge(
        &task(),
        &SourceUnit::new("c", "def f(x): ..."),
        &mut b,
        &JudgeOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(err, JudgeError::BackendUnavailable(_)), "{err}");
}
