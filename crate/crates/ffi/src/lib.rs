//! C ABI for the optfb toolkit.
//!
//! Callers load an experiment file into an opaque handle, run the same
//! workflows the CLI exposes, and read scalar results back through out
//! pointers. Every entry point returns a status code; on failure the
//! message is retrievable with `optfb_last_error`. Handles are not
//! thread-safe; the error slot is thread-local.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use optfb::certify::{max_alpha, optimizer_iqc, CertifyError, MaxAlphaOptions};
use optfb::cli::config::ExperimentConfig;
use optfb::closed_loop::{augment, simulate};
use optfb::controller::{phi1_eval, phi2_eval, OptimizerKind};
use optfb::error::Error;
use optfb::iqc::sample_verify_iqc;

/// Status codes mirroring the CLI exit codes, plus FFI-specific failures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptfbStatus {
    Ok = 0,
    ConfigError = 1,
    Infeasible = 2,
    Diverged = 3,
    IqcViolation = 4,
    NullPointer = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque experiment handle; create with `optfb_experiment_load` or
/// `optfb_experiment_parse`, release with `optfb_experiment_free`.
pub struct OptfbExperiment {
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: OptfbStatus, msg: &str) -> OptfbStatus {
    set_error(msg);
    status
}

fn guard<F: FnOnce() -> OptfbStatus>(f: F) -> OptfbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(OptfbStatus::Panic, "internal panic"),
    }
}

fn core_status(e: &Error) -> OptfbStatus {
    match e {
        Error::Diverged { .. } => OptfbStatus::Diverged,
        _ => OptfbStatus::ConfigError,
    }
}

/// Copies the most recent error message on this thread into `buf` as a
/// NUL-terminated string. Returns the number of bytes the full message
/// needs, including the terminator; the copy is truncated if `buf_len`
/// is smaller.
#[no_mangle]
pub extern "C" fn optfb_last_error(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && buf_len > 0 {
            let n = bytes.len().min(buf_len);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len()
    })
}

fn make_handle(config: ExperimentConfig, out: *mut *mut OptfbExperiment) -> OptfbStatus {
    unsafe {
        *out = Box::into_raw(Box::new(OptfbExperiment { config }));
    }
    OptfbStatus::Ok
}

/// Loads a TOML experiment file. On success `*out` owns the new handle.
#[no_mangle]
pub extern "C" fn optfb_experiment_load(
    path: *const c_char,
    out: *mut *mut OptfbExperiment,
) -> OptfbStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(OptfbStatus::NullPointer, "null pointer argument");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(OptfbStatus::ConfigError, "path is not valid UTF-8"),
        };
        match ExperimentConfig::load(Path::new(path)) {
            Ok(cfg) => make_handle(cfg, out),
            Err(e) => fail(OptfbStatus::ConfigError, &e.to_string()),
        }
    })
}

/// Parses an experiment from TOML text instead of a file.
#[no_mangle]
pub extern "C" fn optfb_experiment_parse(
    text: *const c_char,
    out: *mut *mut OptfbExperiment,
) -> OptfbStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return fail(OptfbStatus::NullPointer, "null pointer argument");
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(OptfbStatus::ConfigError, "text is not valid UTF-8"),
        };
        match ExperimentConfig::parse(text) {
            Ok(cfg) => make_handle(cfg, out),
            Err(e) => fail(OptfbStatus::ConfigError, &e.to_string()),
        }
    })
}

/// Releases a handle. Passing NULL is a no-op.
#[no_mangle]
pub extern "C" fn optfb_experiment_free(handle: *mut OptfbExperiment) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Maximizes the certified decay rate. `alpha_tol <= 0` selects the
/// default relative tolerance. Writes `alpha_max` and the IQC multiplier
/// `sigma` through the out pointers (either may be NULL).
#[no_mangle]
pub extern "C" fn optfb_certify(
    handle: *const OptfbExperiment,
    alpha_tol: f64,
    out_alpha_max: *mut f64,
    out_sigma: *mut f64,
) -> OptfbStatus {
    guard(|| {
        let Some(exp) = (unsafe { handle.as_ref() }) else {
            return fail(OptfbStatus::NullPointer, "null handle");
        };
        let built = (|| {
            let ss = exp.config.state_space()?;
            let cost = exp.config.cost()?;
            let ctrl = exp.config.controller(&ss)?;
            Ok::<_, Error>((ss, cost, ctrl))
        })();
        let (ss, cost, ctrl) = match built {
            Ok(t) => t,
            Err(e) => return fail(OptfbStatus::ConfigError, &e.to_string()),
        };
        let mut opts = MaxAlphaOptions::default();
        if alpha_tol > 0.0 {
            opts.alpha_tol = alpha_tol;
        } else {
            opts.alpha_tol = exp.config.certify.alpha_tol;
        }
        match max_alpha(&ss, &ctrl, &cost, &opts) {
            Ok(res) => {
                let Some(cert) = res.certificate else {
                    return fail(
                        OptfbStatus::Infeasible,
                        "infeasible at the search floor; no positive rate certified",
                    );
                };
                unsafe {
                    if !out_alpha_max.is_null() {
                        *out_alpha_max = res.alpha_max;
                    }
                    if !out_sigma.is_null() {
                        *out_sigma = cert.sigma;
                    }
                }
                OptfbStatus::Ok
            }
            Err(CertifyError::Infeasible { best_margin }) => fail(
                OptfbStatus::Infeasible,
                &format!("LMI infeasible (best margin {best_margin:.3e})"),
            ),
            Err(e) => fail(OptfbStatus::ConfigError, &e.to_string()),
        }
    })
}

/// Integrates the closed loop and writes the final augmented state into
/// `buf`. `dt <= 0` selects the configured step. `*out_len` receives the
/// state dimension; `buf` must hold at least that many doubles.
#[no_mangle]
pub extern "C" fn optfb_simulate_final(
    handle: *const OptfbExperiment,
    dt: f64,
    buf: *mut f64,
    buf_len: usize,
    out_len: *mut usize,
) -> OptfbStatus {
    guard(|| {
        let Some(exp) = (unsafe { handle.as_ref() }) else {
            return fail(OptfbStatus::NullPointer, "null handle");
        };
        if buf.is_null() || out_len.is_null() {
            return fail(OptfbStatus::NullPointer, "null pointer argument");
        }
        let run = (|| {
            let ss = exp.config.state_space()?;
            let cost = exp.config.cost()?;
            let ctrl = exp.config.controller(&ss)?;
            let aug = augment(&ss, &ctrl)?;
            let (cfg_dt, t_final, xi0) = exp.config.simulation_params(aug.dim())?;
            let schedule = exp.config.schedule(ss.m)?;
            let step = if dt > 0.0 { dt } else { cfg_dt };
            let traj = simulate(&ss, &ctrl, &cost, &schedule, &xi0, step, t_final)?;
            Ok::<_, Error>(traj.states.last().unwrap().clone())
        })();
        match run {
            Ok(xi) => {
                unsafe { *out_len = xi.len() };
                if buf_len < xi.len() {
                    return fail(
                        OptfbStatus::BufferTooSmall,
                        &format!("state needs {} doubles, buffer holds {buf_len}", xi.len()),
                    );
                }
                unsafe {
                    std::ptr::copy_nonoverlapping(xi.as_slice().as_ptr(), buf, xi.len());
                }
                OptfbStatus::Ok
            }
            Err(e) => fail(core_status(&e), &e.to_string()),
        }
    })
}

/// Sample-checks the configured optimizer's IQC around the cost minimizer
/// with `samples` seeded draws; writes the smallest normalized
/// quadratic-form value if `out_min_value` is non-NULL.
#[no_mangle]
pub extern "C" fn optfb_verify_iqc(
    handle: *const OptfbExperiment,
    samples: usize,
    seed: u64,
    out_min_value: *mut f64,
) -> OptfbStatus {
    guard(|| {
        let Some(exp) = (unsafe { handle.as_ref() }) else {
            return fail(OptfbStatus::NullPointer, "null handle");
        };
        let run = (|| {
            let ss = exp.config.state_space()?;
            let cost = exp.config.cost()?;
            let ctrl = exp.config.controller(&ss)?;
            let iqc = optimizer_iqc(&ctrl, &cost)?;
            let x_star = cost.minimizer()?;
            let report = match ctrl.optimizer {
                OptimizerKind::Phi1 => {
                    sample_verify_iqc(&iqc, |p| phi1_eval(&cost, p), &x_star, samples, seed)
                }
                OptimizerKind::Phi2 => {
                    let rho = ctrl.rho.expect("validated");
                    sample_verify_iqc(
                        &iqc,
                        |p| phi2_eval(&cost, rho, p).expect("SPD cost"),
                        &x_star,
                        samples,
                        seed,
                    )
                }
            };
            Ok::<_, Error>(report)
        })();
        match run {
            Ok(report) => {
                if !out_min_value.is_null() {
                    unsafe { *out_min_value = report.min_value };
                }
                if report.pass {
                    OptfbStatus::Ok
                } else {
                    fail(OptfbStatus::IqcViolation, "IQC violated on sampled inputs")
                }
            }
            Err(e) => fail(OptfbStatus::ConfigError, &e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    const SCALAR: &str = r#"
        [plant]
        a = [[-5.0]]
        b = [[1.0]]
        c = [[1.0]]

        [cost]
        q = [[2.0]]
        c = [-20.0]
        v = 100.0

        [controller]
        k_i = [[1.0]]
        k_p = [[1.0]]
        optimizer = "phi1"
        estimator = "bypass"

        [simulation]
        dt = 1e-3
        t_final = 50.0
        xi0 = [0.0, 0.0]
        disturbance = [{ t = 0.0, w = [2.0] }]
    "#;

    fn parse(text: &str) -> *mut OptfbExperiment {
        let c = CString::new(text).unwrap();
        let mut h: *mut OptfbExperiment = ptr::null_mut();
        assert_eq!(optfb_experiment_parse(c.as_ptr(), &mut h), OptfbStatus::Ok);
        assert!(!h.is_null());
        h
    }

    #[test]
    fn parse_certify_free() {
        let h = parse(SCALAR);
        let mut alpha = 0.0;
        let mut sigma = 0.0;
        assert_eq!(
            optfb_certify(h, 0.0, &mut alpha, &mut sigma),
            OptfbStatus::Ok
        );
        assert!(alpha > 0.5 && alpha < 0.7, "alpha_max = {alpha}");
        assert!(sigma >= 0.0);
        optfb_experiment_free(h);
    }

    #[test]
    fn simulate_reaches_optimum() {
        let h = parse(SCALAR);
        let mut buf = [0.0f64; 2];
        let mut len = 0usize;
        assert_eq!(
            optfb_simulate_final(h, 0.0, buf.as_mut_ptr(), buf.len(), &mut len),
            OptfbStatus::Ok
        );
        assert_eq!(len, 2);
        assert!((buf[0] - 10.0).abs() < 1e-3, "x = {}", buf[0]);
        optfb_experiment_free(h);
    }

    #[test]
    fn small_buffer_reports_needed_length() {
        let h = parse(SCALAR);
        let mut buf = [0.0f64; 1];
        let mut len = 0usize;
        assert_eq!(
            optfb_simulate_final(h, 0.0, buf.as_mut_ptr(), buf.len(), &mut len),
            OptfbStatus::BufferTooSmall
        );
        assert_eq!(len, 2);
        optfb_experiment_free(h);
    }

    #[test]
    fn verify_iqc_passes() {
        let h = parse(SCALAR);
        let mut min_value = f64::NEG_INFINITY;
        assert_eq!(
            optfb_verify_iqc(h, 1000, 0, &mut min_value),
            OptfbStatus::Ok
        );
        assert!(min_value >= -1e-8);
        optfb_experiment_free(h);
    }

    #[test]
    fn bad_config_sets_error_message() {
        let c = CString::new("this is not toml at all [").unwrap();
        let mut h: *mut OptfbExperiment = ptr::null_mut();
        assert_eq!(
            optfb_experiment_parse(c.as_ptr(), &mut h),
            OptfbStatus::ConfigError
        );
        let mut buf = [0i8; 256];
        let needed = optfb_last_error(buf.as_mut_ptr() as *mut c_char, buf.len());
        assert!(needed > 1);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr() as *const c_char) };
        assert!(!msg.to_str().unwrap().is_empty());
    }

    #[test]
    fn null_arguments_rejected() {
        assert_eq!(
            optfb_experiment_load(ptr::null(), ptr::null_mut()),
            OptfbStatus::NullPointer
        );
        assert_eq!(
            optfb_certify(ptr::null(), 0.0, ptr::null_mut(), ptr::null_mut()),
            OptfbStatus::NullPointer
        );
        optfb_experiment_free(ptr::null_mut());
    }

    #[test]
    fn load_from_file() {
        let dir = std::env::temp_dir().join("optfb_ffi_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scalar.toml");
        std::fs::write(&path, SCALAR).unwrap();
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let mut h: *mut OptfbExperiment = ptr::null_mut();
        assert_eq!(optfb_experiment_load(c.as_ptr(), &mut h), OptfbStatus::Ok);
        optfb_experiment_free(h);
    }
}
