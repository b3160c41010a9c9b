//! Exercises the C ABI surface from Rust, including error paths.

use std::ffi::{CStr, CString};
use std::io::Write;
use std::ptr;

use dassim_ffi::*;

fn write_cfg(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f.flush().unwrap();
    f
}

const SMALL_CFG: &str = "\
nbNodes = 20
rowSizeN = 4
colSizeN = 4
rowSizeK = 2
colSizeK = 2
custodyRow = 1
custodyCol = 1
cellSizeBytes = 512
class1Ratio = 0.5
vpn1 = 1
vpn2 = 1
netDegree = 4
failureRate = 0
maliciousRate = 0
bwUplinkProducer = 1000
bwUplink1 = 1000
bwUplink2 = 1000
latencyMs = 0
stepDurationMs = 50
slotDurationMs = 60000
seed = 7
";

fn load(path: &std::path::Path) -> *mut DassimConfig {
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut cfg: *mut DassimConfig = ptr::null_mut();
    let status = unsafe { dassim_config_load(c_path.as_ptr(), &mut cfg) };
    assert_eq!(status, DassimStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn load_run_and_read_results() {
    let f = write_cfg(SMALL_CFG);
    let cfg = load(f.path());
    unsafe {
        assert!(dassim_last_error().is_null());

        let mut res: *mut DassimResult = ptr::null_mut();
        assert_eq!(dassim_run(cfg, &mut res), DassimStatus::Ok);

        let theoretical = dassim_result_theoretical(res);
        // 19 counted nodes × 1 validator × (4+4) custodied cells.
        assert_eq!(theoretical, 19 * 8);
        assert_eq!(dassim_result_delivered(res), theoretical);
        assert_eq!(dassim_result_termination(res), DassimTermination::Complete);

        let steps = dassim_result_steps(res);
        assert!(steps >= 2);
        let (mut t, mut m) = (u64::MAX, u64::MAX);
        assert_eq!(
            dassim_result_missing_at(res, 0, &mut t, &mut m),
            DassimStatus::Ok
        );
        assert_eq!((t, m), (0, theoretical));
        assert_eq!(
            dassim_result_missing_at(res, steps - 1, &mut t, &mut m),
            DassimStatus::Ok
        );
        assert_eq!(m, 0);

        // Null output pointers are allowed.
        assert_eq!(
            dassim_result_missing_at(res, 1, ptr::null_mut(), ptr::null_mut()),
            DassimStatus::Ok
        );

        dassim_result_free(res);
        dassim_config_free(cfg);
    }
}

#[test]
fn runs_are_deterministic_across_handles() {
    let f = write_cfg(SMALL_CFG);
    let (cfg_a, cfg_b) = (load(f.path()), load(f.path()));
    unsafe {
        let mut res_a: *mut DassimResult = ptr::null_mut();
        let mut res_b: *mut DassimResult = ptr::null_mut();
        assert_eq!(dassim_run(cfg_a, &mut res_a), DassimStatus::Ok);
        assert_eq!(dassim_run(cfg_b, &mut res_b), DassimStatus::Ok);
        assert_eq!(dassim_config_seed(cfg_a), dassim_config_seed(cfg_b));
        let steps = dassim_result_steps(res_a);
        assert_eq!(steps, dassim_result_steps(res_b));
        for i in 0..steps {
            let (mut ma, mut mb) = (0u64, 0u64);
            dassim_result_missing_at(res_a, i, ptr::null_mut(), &mut ma);
            dassim_result_missing_at(res_b, i, ptr::null_mut(), &mut mb);
            assert_eq!(ma, mb, "step {i}");
        }
        dassim_result_free(res_a);
        dassim_result_free(res_b);
        dassim_config_free(cfg_a);
        dassim_config_free(cfg_b);
    }
}

#[test]
fn error_paths_set_messages() {
    unsafe {
        // Null arguments.
        let mut cfg: *mut DassimConfig = ptr::null_mut();
        assert_eq!(
            dassim_config_load(ptr::null(), &mut cfg),
            DassimStatus::NullArgument
        );
        assert!(!dassim_last_error().is_null());

        // Missing file.
        let path = CString::new("/nonexistent/dassim.cfg").unwrap();
        assert_eq!(
            dassim_config_load(path.as_ptr(), &mut cfg),
            DassimStatus::Io
        );
        let msg = CStr::from_ptr(dassim_last_error()).to_str().unwrap();
        assert!(msg.contains("nonexistent"), "{msg}");

        // Unparseable / invalid config.
        let bad = write_cfg("nbNodes = banana\n");
        let c_path = CString::new(bad.path().to_str().unwrap()).unwrap();
        assert_eq!(
            dassim_config_load(c_path.as_ptr(), &mut cfg),
            DassimStatus::InvalidConfig
        );

        // Sweeps are rejected.
        let multi = write_cfg(&SMALL_CFG.replace("seed = 7", "seed = 7\nrunsPerPoint = 2"));
        let c_path = CString::new(multi.path().to_str().unwrap()).unwrap();
        assert_eq!(
            dassim_config_load(c_path.as_ptr(), &mut cfg),
            DassimStatus::MultipleRuns
        );
        let msg = CStr::from_ptr(dassim_last_error()).to_str().unwrap();
        assert!(msg.contains("2 runs"), "{msg}");

        // Out-of-range series index.
        let good = write_cfg(SMALL_CFG);
        let cfg = load(good.path());
        let mut res: *mut DassimResult = ptr::null_mut();
        assert_eq!(dassim_run(cfg, &mut res), DassimStatus::Ok);
        assert_eq!(
            dassim_result_missing_at(res, usize::MAX, ptr::null_mut(), ptr::null_mut()),
            DassimStatus::OutOfRange
        );
        dassim_result_free(res);
        dassim_config_free(cfg);

        // Frees tolerate null.
        dassim_config_free(ptr::null_mut());
        dassim_result_free(ptr::null_mut());
    }
}
