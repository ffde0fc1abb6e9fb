use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use contract_net::RunConfig;
use contract_net_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> Option<String> {
    let p = cnp_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

struct Config(*mut CnpConfig);

impl Config {
    fn new(pairs: &[(&str, &str)]) -> Self {
        let cfg = Config(cnp_config_new());
        for (k, v) in pairs {
            assert_eq!(cfg.set(k, v), CnpStatus::Ok, "{k}={v}");
        }
        cfg
    }

    fn set(&self, k: &str, v: &str) -> CnpStatus {
        unsafe { cnp_config_set(self.0, c(k).as_ptr(), c(v).as_ptr()) }
    }

    fn run(&self) -> (CnpStatus, *mut CnpRun) {
        let mut out = ptr::null_mut();
        let s = unsafe { cnp_run(self.0, &mut out) };
        (s, out)
    }
}

impl Drop for Config {
    fn drop(&mut self) {
        unsafe { cnp_config_free(self.0) }
    }
}

fn trace_of(run: *const CnpRun) -> String {
    let p = unsafe { cnp_run_trace(run) };
    assert!(!p.is_null());
    let text = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { cnp_string_free(p) };
    text
}

fn validate(text: &str, variant: Option<&str>) -> (CnpStatus, usize) {
    let text = c(text);
    let variant = variant.map(c);
    let mut n = usize::MAX;
    let s = unsafe {
        cnp_validate_trace(
            text.as_ptr(),
            variant.as_ref().map_or(ptr::null(), |v| v.as_ptr()),
            ptr::null(),
            &mut n,
        )
    };
    (s, n)
}

#[test]
fn metrics_match_the_library() {
    let cfg = Config::new(&[("seed", "9"), ("variant", "conventional")]);
    let (status, run) = cfg.run();
    assert_eq!(status, CnpStatus::Ok);
    let mut m = CnpMetrics::default();
    assert_eq!(unsafe { cnp_run_metrics(run, &mut m) }, CnpStatus::Ok);

    let mut direct = RunConfig::default();
    direct.set("seed", "9").unwrap();
    direct.set("variant", "conventional").unwrap();
    let r = contract_net::run(&direct).unwrap().report;
    assert_eq!(
        m,
        CnpMetrics {
            tasks_total: r.tasks_total as u64,
            tasks_updated: r.tasks_updated as u64,
            task_repetitions: r.task_repetitions,
            message_count: r.message_count as u64,
            elapsed_ticks: r.elapsed_ticks,
        }
    );
    unsafe { cnp_run_free(run) };
}

#[test]
fn trace_validates_under_its_own_header_only() {
    let cfg = Config::new(&[]);
    let (_, run) = cfg.run();
    let text = trace_of(run);
    unsafe { cnp_run_free(run) };
    assert!(text.starts_with("# cnp-trace variant=updated"));
    assert_eq!(validate(&text, None), (CnpStatus::Ok, 0));
    let (s, n) = validate(&text, Some("conventional"));
    assert_eq!(s, CnpStatus::Ok);
    assert!(n > 0);
}

#[test]
fn config_errors_are_reported() {
    let cfg = Config::new(&[]);
    assert_eq!(cfg.set("nonsense", "1"), CnpStatus::Config);
    assert!(last_error().unwrap().contains("nonsense"));
    assert_eq!(cfg.set("seed", "12"), CnpStatus::Ok);
    assert_eq!(last_error(), None);

    let text = c("tasks = 3\nchanges = 4\n");
    assert_eq!(
        unsafe { cnp_config_apply_text(cfg.0, text.as_ptr()) },
        CnpStatus::Ok
    );
    let (status, run) = cfg.run();
    assert_eq!(status, CnpStatus::Config);
    assert!(run.is_null());
}

#[test]
fn timeouts_are_distinguished() {
    let cfg = Config::new(&[
        ("contractors", "0"),
        ("retry_budget", "unlimited"),
        ("max_ticks", "40"),
    ]);
    let (status, run) = cfg.run();
    assert_eq!(status, CnpStatus::Timeout);
    assert!(run.is_null());
    assert!(last_error().unwrap().contains("task-01"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { cnp_run(ptr::null(), &mut out) },
        CnpStatus::NullArgument
    );
    assert_eq!(
        unsafe { cnp_config_set(ptr::null_mut(), c("seed").as_ptr(), c("1").as_ptr()) },
        CnpStatus::NullArgument
    );
    assert_eq!(
        unsafe { cnp_run_metrics(ptr::null(), ptr::null_mut()) },
        CnpStatus::NullArgument
    );
    assert!(unsafe { cnp_run_trace(ptr::null()) }.is_null());
    let mut n = 0;
    assert_eq!(
        unsafe { cnp_validate_trace(ptr::null(), ptr::null(), ptr::null(), &mut n) },
        CnpStatus::NullArgument
    );
    unsafe {
        cnp_config_free(ptr::null_mut());
        cnp_run_free(ptr::null_mut());
        cnp_string_free(ptr::null_mut());
    }
}

#[test]
fn unparsable_trace_and_missing_header() {
    assert_eq!(validate("1|x|y\n", Some("updated")).0, CnpStatus::Parse);
    let cfg = Config::new(&[]);
    let (_, run) = cfg.run();
    let text = trace_of(run);
    unsafe { cnp_run_free(run) };
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert_eq!(validate(&body, None).0, CnpStatus::Config);
    assert_eq!(validate(&body, Some("updated")), (CnpStatus::Ok, 0));
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(cnp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("include/contract_net.h"),
    )
    .unwrap();
    for name in [
        "cnp_config_new",
        "cnp_config_set",
        "cnp_config_apply_text",
        "cnp_config_free",
        "cnp_run",
        "cnp_run_metrics",
        "cnp_run_trace",
        "cnp_run_free",
        "cnp_validate_trace",
        "cnp_string_free",
        "cnp_last_error",
        "cnp_version",
        "typedef struct CnpConfig CnpConfig",
        "typedef struct CnpRun CnpRun",
        "CNP_STATUS_TIMEOUT = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

fn static_lib() -> Option<PathBuf> {
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    let lib = deps.parent()?.join("libcontract_net_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cnp_smoke");
    let status = Command::new("cc")
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());

    let mut direct = RunConfig::default();
    direct.set("seed", "7").unwrap();
    let r = contract_net::run(&direct).unwrap().report;
    let expect = format!(
        "{} {} {} {} {}\n",
        r.tasks_total, r.tasks_updated, r.task_repetitions, r.message_count, r.elapsed_ticks
    );
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expect);
}
