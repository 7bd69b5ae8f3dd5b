//! Config-driven experiment runner behind the `optfb` binary: certify,
//! simulate, sweep, verify-iqc. Each command reads one TOML experiment
//! file, optionally applies command-line overrides, and writes CSV.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;

use crate::certify::{
    max_alpha, max_alpha_with_iqc, optimizer_iqc, CertifyError, MaxAlphaOptions,
};
use crate::closed_loop::{augment, simulate, Layout, Trajectory};
use crate::controller::{phi1_eval, phi2_eval, ControllerConfig, OptimizerKind};
use crate::error::Error;
use crate::iqc::{phi1_iqc, phi2_iqc, sample_verify_iqc};
use crate::model::QuadraticCost;
use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IQC: i32 = 4;

/// Test hook: setting this environment variable to `1` negates the IQC
/// multiplier before `verify-iqc` runs, so the violation path is reachable.
pub const CORRUPT_IQC_ENV: &str = "OPTFB_CORRUPT_IQC";

/// Number of samples `verify-iqc` draws.
pub const VERIFY_IQC_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Phi1,
    Phi2,
    Both,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub dt: Option<f64>,
    pub alpha_tol: Option<f64>,
    pub seed: Option<u64>,
    pub optimizer: Option<OptimizerChoice>,
}

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::config(e.to_string())
    }
}

impl From<CertifyError> for CmdError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Infeasible { best_margin } => CmdError {
                code: EXIT_INFEASIBLE,
                message: format!("LMI infeasible (best margin {best_margin:.3e})"),
            },
            other => CmdError::config(other.to_string()),
        }
    }
}

pub type CmdResult = std::result::Result<(), CmdError>;

/// Formats a float with 12 significant digits for CSV output.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.11e}")
    }
}

fn write_out(path: Option<&Path>, content: &str) -> CmdResult {
    if let Some(p) = path {
        std::fs::write(p, content)
            .map_err(|e| CmdError::config(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

/// Applies `--optimizer phi1|phi2` to a loaded controller; `both` is only
/// meaningful for `sweep`.
fn apply_optimizer_override(
    ctrl: &mut ControllerConfig,
    choice: Option<OptimizerChoice>,
) -> CmdResult {
    match choice {
        None => Ok(()),
        Some(OptimizerChoice::Phi1) => {
            ctrl.optimizer = OptimizerKind::Phi1;
            Ok(())
        }
        Some(OptimizerChoice::Phi2) => {
            if ctrl.rho.is_none() {
                return Err(CmdError::config(
                    "controller.rho: required to override optimizer to phi2",
                ));
            }
            ctrl.optimizer = OptimizerKind::Phi2;
            Ok(())
        }
        Some(OptimizerChoice::Both) => Err(CmdError::config(
            "--optimizer both is only valid for the sweep command",
        )),
    }
}

fn alpha_options(cfg: &ExperimentConfig, ov: &Overrides) -> MaxAlphaOptions {
    let mut opts = MaxAlphaOptions::default();
    opts.alpha_tol = ov.alpha_tol.unwrap_or(cfg.certify.alpha_tol);
    opts
}

/// `certify`: maximize the certified decay rate for the configured loop.
///
/// Writes one CSV row `{alpha_max, sigma, p_min_eig, lmi_max_eig}`; the
/// wall time is printed but kept out of the CSV so repeated runs produce
/// byte-identical files.
pub fn cmd_certify(config_path: &Path, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(config_path)?;
    let ss = cfg.state_space()?;
    let cost = cfg.cost()?;
    let mut ctrl = cfg.controller(&ss)?;
    apply_optimizer_override(&mut ctrl, ov.optimizer)?;
    let opts = alpha_options(&cfg, ov);

    let started = Instant::now();
    let res = max_alpha(&ss, &ctrl, &cost, &opts)?;
    let wall = started.elapsed().as_secs_f64();

    let Some(cert) = res.certificate else {
        return Err(CmdError {
            code: EXIT_INFEASIBLE,
            message: format!(
                "infeasible at the search floor; no positive rate certified ({} queries)",
                res.trace.len()
            ),
        });
    };

    let mut csv = String::from("alpha_max,sigma,p_min_eig,lmi_max_eig\n");
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        fmt_sig(res.alpha_max),
        fmt_sig(cert.sigma),
        fmt_sig(cert.p_min_eig),
        fmt_sig(cert.lmi_max_eig)
    );
    write_out(ov.out.as_deref(), &csv)?;
    println!(
        "alpha_max = {} sigma = {} p_min_eig = {} lmi_max_eig = {} wall_time = {wall:.3}s",
        fmt_sig(res.alpha_max),
        fmt_sig(cert.sigma),
        fmt_sig(cert.p_min_eig),
        fmt_sig(cert.lmi_max_eig)
    );
    Ok(())
}

fn trajectory_csv(traj: &Trajectory, layout: Layout, n: usize, m: usize) -> String {
    let mut header = String::from("t");
    let cols = |h: &mut String, tag: &str, k: usize| {
        for i in 1..=k {
            let _ = write!(h, ",{tag}_{i}");
        }
    };
    cols(&mut header, "x", n);
    if layout == Layout::Full {
        cols(&mut header, "xhat", n);
    }
    cols(&mut header, "eI", n);
    cols(&mut header, "e", n);
    cols(&mut header, "r", m);
    cols(&mut header, "w", m);
    header.push('\n');

    let mut out = header;
    for ((t, xi), aux) in traj.times.iter().zip(&traj.states).zip(&traj.aux) {
        let _ = write!(out, "{}", fmt_sig(*t));
        let push = |o: &mut String, v: &[f64]| {
            for x in v {
                let _ = write!(o, ",{}", fmt_sig(*x));
            }
        };
        let xi = xi.as_slice();
        match layout {
            Layout::Full => {
                push(&mut out, &xi[0..n]);
                push(&mut out, &xi[n..2 * n]);
                push(&mut out, &xi[2 * n..3 * n]);
            }
            Layout::Reduced => {
                push(&mut out, &xi[0..n]);
                push(&mut out, &xi[n..2 * n]);
            }
        }
        push(&mut out, aux.e.as_slice());
        push(&mut out, aux.r.as_slice());
        push(&mut out, aux.w.as_slice());
        out.push('\n');
    }
    out
}

/// `simulate`: integrate the closed loop and dump the trajectory as CSV.
/// On divergence the rows computed so far are still flushed (exit 3).
pub fn cmd_simulate(config_path: &Path, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(config_path)?;
    let ss = cfg.state_space()?;
    let cost = cfg.cost()?;
    let mut ctrl = cfg.controller(&ss)?;
    apply_optimizer_override(&mut ctrl, ov.optimizer)?;
    let aug = augment(&ss, &ctrl)?;

    let (cfg_dt, t_final, xi0) = cfg.simulation_params(aug.dim())?;
    let dt = ov.dt.unwrap_or(cfg_dt);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CmdError::config(format!("--dt must be positive, got {dt}")));
    }
    let schedule = cfg.schedule(ss.m)?;

    match simulate(&ss, &ctrl, &cost, &schedule, &xi0, dt, t_final) {
        Ok(traj) => {
            let csv = trajectory_csv(&traj, aug.layout, ss.n, ss.m);
            write_out(ov.out.as_deref(), &csv)?;
            println!(
                "simulated {} steps to t = {}",
                traj.times.len() - 1,
                fmt_sig(*traj.times.last().unwrap())
            );
            Ok(())
        }
        Err(Error::Diverged { t, partial }) => {
            let csv = trajectory_csv(&partial, aug.layout, ss.n, ss.m);
            write_out(ov.out.as_deref(), &csv)?;
            Err(CmdError {
                code: EXIT_DIVERGED,
                message: format!("state norm diverged at t = {t}; partial trajectory written"),
            })
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SweepParam {
    Rho,
    Q,
    MSc,
}

/// One grid point of a sweep: `alpha_max` per optimizer, NaN when the
/// solver failed (not when the LMI is merely infeasible, which is 0).
fn sweep_point(
    param: SweepParam,
    value: f64,
    kind: OptimizerKind,
    ss: &crate::model::StateSpace,
    base_ctrl: &ControllerConfig,
    base_cost: &QuadraticCost,
    opts: &MaxAlphaOptions,
    warnings: &mut usize,
) -> std::result::Result<f64, CmdError> {
    let mut ctrl = base_ctrl.clone();
    ctrl.optimizer = kind;
    if kind == OptimizerKind::Phi2 && ctrl.rho.is_none() {
        return Err(CmdError::config(
            "controller.rho: required to sweep with optimizer phi2",
        ));
    }

    let run = |ctrl: &ControllerConfig, cost: &QuadraticCost| {
        max_alpha(ss, ctrl, cost, opts)
    };
    let outcome = match param {
        SweepParam::Rho => {
            if kind == OptimizerKind::Phi2 {
                ctrl.rho = Some(value);
            }
            run(&ctrl, base_cost)
        }
        SweepParam::Q => {
            // scale the whole cost; the minimizer stays put while the
            // curvature (and both sector constants) scale by `value`
            let cost = QuadraticCost::new(
                &base_cost.q * value,
                &base_cost.c * value,
                base_cost.v * value,
            )
            .map_err(|e| CmdError::config(format!("sweep.values: q = {value}: {e}")))?;
            run(&ctrl, &cost)
        }
        SweepParam::MSc => {
            // certify against a widened sector [value, L_f] instead of the
            // cost's own strong-convexity constant
            let (_, l_f) = base_cost.sector_constants();
            if !(value <= l_f) {
                return Err(CmdError::config(format!(
                    "sweep.values: m_sc = {value} exceeds L_f = {l_f}"
                )));
            }
            let iqc = match kind {
                OptimizerKind::Phi1 => phi1_iqc(value, l_f, base_cost.dim()),
                OptimizerKind::Phi2 => {
                    phi2_iqc(value, l_f, ctrl.rho.expect("checked above"), base_cost.dim())
                }
            }
            .map_err(|e| CmdError::config(format!("sweep.values: m_sc = {value}: {e}")))?;
            max_alpha_with_iqc(ss, &ctrl, &iqc, opts)
        }
    };
    match outcome {
        Ok(res) => Ok(res.alpha_max),
        Err(CertifyError::Infeasible { .. }) => Ok(0.0),
        Err(CertifyError::SolverFailure(msg)) => {
            eprintln!("warning: solver failure at grid value {value}: {msg}");
            *warnings += 1;
            Ok(f64::NAN)
        }
        Err(CertifyError::Core(e)) => Err(e.into()),
    }
}

/// `sweep`: tabulate `alpha_max` over a parameter grid for one or both
/// optimizers. Rows are emitted in grid order; per-point solver failures
/// become NaN cells and a warning, not a failed run.
pub fn cmd_sweep(config_path: &Path, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(config_path)?;
    let ss = cfg.state_space()?;
    let cost = cfg.cost()?;
    let ctrl = cfg.controller(&ss)?;
    let opts = alpha_options(&cfg, ov);

    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CmdError::config("sweep: section required for this command"))?;
    let param = match sweep.parameter.as_str() {
        "rho" => SweepParam::Rho,
        "q" => SweepParam::Q,
        "m_sc" => SweepParam::MSc,
        other => {
            return Err(CmdError::config(format!(
                "sweep.parameter: expected \"rho\", \"q\" or \"m_sc\", got \"{other}\""
            )))
        }
    };
    if sweep.values.is_empty() {
        return Err(CmdError::config("sweep.values: must be non-empty"));
    }
    for v in &sweep.values {
        if !(v.is_finite() && *v > 0.0) {
            return Err(CmdError::config(format!(
                "sweep.values: entries must be positive and finite, got {v}"
            )));
        }
    }
    let choice = ov.optimizer.unwrap_or(OptimizerChoice::Both);
    let (run1, run2) = match choice {
        OptimizerChoice::Phi1 => (true, false),
        OptimizerChoice::Phi2 => (false, true),
        OptimizerChoice::Both => (true, true),
    };

    let mut warnings = 0usize;
    let mut csv = String::from("param_value,alpha_max_phi1,alpha_max_phi2\n");
    for &v in &sweep.values {
        let a1 = if run1 {
            sweep_point(
                param,
                v,
                OptimizerKind::Phi1,
                &ss,
                &ctrl,
                &cost,
                &opts,
                &mut warnings,
            )?
        } else {
            f64::NAN
        };
        let a2 = if run2 {
            sweep_point(
                param,
                v,
                OptimizerKind::Phi2,
                &ss,
                &ctrl,
                &cost,
                &opts,
                &mut warnings,
            )?
        } else {
            f64::NAN
        };
        let _ = writeln!(csv, "{},{},{}", fmt_sig(v), fmt_sig(a1), fmt_sig(a2));
    }
    write_out(ov.out.as_deref(), &csv)?;
    print!("{csv}");
    if warnings > 0 {
        eprintln!("{warnings} grid point(s) recorded as NaN after solver failures");
    }
    Ok(())
}

/// `verify-iqc`: sample-check the configured optimizer's IQC around the
/// cost minimizer. Exit 4 on violation.
pub fn cmd_verify_iqc(config_path: &Path, ov: &Overrides) -> CmdResult {
    let cfg = ExperimentConfig::load(config_path)?;
    let ss = cfg.state_space()?;
    let cost = cfg.cost()?;
    let mut ctrl = cfg.controller(&ss)?;
    apply_optimizer_override(&mut ctrl, ov.optimizer)?;

    let mut iqc = optimizer_iqc(&ctrl, &cost).map_err(CmdError::from)?;
    if std::env::var(CORRUPT_IQC_ENV).as_deref() == Ok("1") {
        let k = iqc.qmat.nrows();
        iqc.qmat -= nalgebra::DMatrix::<f64>::identity(k, k) * (1.0 + iqc.qmat.amax());
    }
    let x_star = cost.minimizer()?;
    let seed = ov.seed.unwrap_or(0);

    let report = match ctrl.optimizer {
        OptimizerKind::Phi1 => sample_verify_iqc(
            &iqc,
            |p| phi1_eval(&cost, p),
            &x_star,
            VERIFY_IQC_SAMPLES,
            seed,
        ),
        OptimizerKind::Phi2 => {
            let rho = ctrl.rho.expect("validated");
            let phi = |p: &DVector<f64>| phi2_eval(&cost, rho, p).expect("SPD cost");
            sample_verify_iqc(&iqc, phi, &x_star, VERIFY_IQC_SAMPLES, seed)
        }
    };

    let mut csv = String::from("min_value,min_raw,samples,pass\n");
    let _ = writeln!(
        csv,
        "{},{},{},{}",
        fmt_sig(report.min_value),
        fmt_sig(report.min_raw),
        report.samples,
        report.pass
    );
    write_out(ov.out.as_deref(), &csv)?;
    println!(
        "min quadratic-form value {} (normalized {}) over {} samples: {}",
        fmt_sig(report.min_raw),
        fmt_sig(report.min_value),
        report.samples,
        if report.pass { "pass" } else { "FAIL" }
    );
    if report.pass {
        Ok(())
    } else {
        Err(CmdError {
            code: EXIT_IQC,
            message: "IQC violated on sampled inputs; construction is inconsistent".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_sig_has_12_digits() {
        assert_eq!(fmt_sig(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_sig(-12345.678), "-1.23456780000e4");
        assert_eq!(fmt_sig(f64::NAN), "NaN");
        assert_eq!(fmt_sig(0.0), "0.00000000000e0");
    }
}
