//! Stability certification: assembles the IQC-augmented Lyapunov LMI,
//! decides feasibility at a fixed decay rate, independently rechecks
//! certificates, and maximizes the certified rate by bracketed bisection.

mod jacobi;
pub mod sdp;

pub use jacobi::jacobi_eigenvalues;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::closed_loop::{augment, AugmentedSystem};
use crate::controller::{ControllerConfig, OptimizerKind};
use crate::error::Error as CoreError;
use crate::iqc::{phi1_iqc, phi2_iqc, PointwiseIqc};
use crate::model::{QuadraticCost, StateSpace};

/// Data of one LMI feasibility query at a fixed rate `alpha`.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub ahat: DMatrix<f64>,
    pub bhat: DMatrix<f64>,
    pub chat: DMatrix<f64>,
    /// Zero in the optimizer interconnection; kept for the generic form.
    pub dhat: DMatrix<f64>,
    /// Symmetric `2k×2k` IQC multiplier matrix.
    pub qiqc: DMatrix<f64>,
    pub alpha: f64,
}

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("LMI infeasible (best margin {best_margin:.3e})")]
    Infeasible { best_margin: f64 },

    #[error("feasibility solver failed: {0}")]
    SolverFailure(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl LmiProblem {
    pub fn new(
        ahat: DMatrix<f64>,
        bhat: DMatrix<f64>,
        chat: DMatrix<f64>,
        dhat: DMatrix<f64>,
        qiqc: DMatrix<f64>,
        alpha: f64,
    ) -> Result<Self, CoreError> {
        let n = ahat.nrows();
        let k = chat.nrows();
        if ahat.ncols() != n {
            return Err(CoreError::Dimension("Ahat must be square".into()));
        }
        if bhat.nrows() != n || bhat.ncols() != k {
            return Err(CoreError::Dimension(format!(
                "Bhat must be {n}x{k}, got {}x{}",
                bhat.nrows(),
                bhat.ncols()
            )));
        }
        if chat.ncols() != n || dhat.nrows() != k || dhat.ncols() != k {
            return Err(CoreError::Dimension("Chat/Dhat dimensions inconsistent".into()));
        }
        if qiqc.nrows() != 2 * k || qiqc.ncols() != 2 * k {
            return Err(CoreError::Dimension(format!(
                "Qiqc must be {0}x{0}",
                2 * k
            )));
        }
        if (&qiqc - qiqc.transpose()).amax() > 1e-12 * (1.0 + qiqc.amax()) {
            return Err(CoreError::InvalidParameter("Qiqc must be symmetric".into()));
        }
        Ok(Self {
            ahat,
            bhat,
            chat,
            dhat,
            qiqc,
            alpha,
        })
    }

    /// Builds the stability problem from the augmented interconnection and
    /// the optimizer IQC (`D̂ = 0`, `k = n`).
    pub fn from_augmented(
        aug: &AugmentedSystem,
        iqc: &PointwiseIqc,
        alpha: f64,
    ) -> Result<Self, CoreError> {
        let k = aug.n;
        Self::new(
            aug.ahat.clone(),
            aug.bhat_e.clone(),
            aug.chat.clone(),
            DMatrix::zeros(k, k),
            iqc.qmat.clone(),
            alpha,
        )
    }

    /// The constant σ-coefficient `[[Ĉᵀ, 0], [D̂ᵀ, I]] Q [[Ĉ, D̂], [0, I]]`.
    pub(crate) fn iqc_outer(&self) -> DMatrix<f64> {
        let n = self.ahat.nrows();
        let k = self.chat.nrows();
        let mut right = DMatrix::zeros(2 * k, n + k);
        right.view_mut((0, 0), (k, n)).copy_from(&self.chat);
        right.view_mut((0, n), (k, k)).copy_from(&self.dhat);
        right
            .view_mut((k, n), (k, k))
            .copy_from(&DMatrix::identity(k, k));
        let outer = right.transpose() * &self.qiqc * right;
        (&outer + outer.transpose()) * 0.5
    }
}

/// Assembles the symmetric LMI left-hand side
/// `[[ÂᵀP + PÂ + αP, PB̂], [B̂ᵀP, 0]] + σ·[[Ĉᵀ,0],[D̂ᵀ,I]] Q [[Ĉ,D̂],[0,I]]`.
pub fn assemble_lmi(prob: &LmiProblem, p: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = prob.ahat.nrows();
    let k = prob.chat.nrows();
    let mut m = DMatrix::zeros(n + k, n + k);
    let top = prob.ahat.transpose() * p + p * &prob.ahat + p * prob.alpha;
    let pb = p * &prob.bhat;
    m.view_mut((0, 0), (n, n)).copy_from(&top);
    m.view_mut((0, n), (n, k)).copy_from(&pb);
    m.view_mut((n, 0), (k, n)).copy_from(&pb.transpose());
    m += prob.iqc_outer() * sigma;
    (&m + m.transpose()) * 0.5
}

/// A `(P, σ, α)` triple certifying exponential decay at rate `α`,
/// normalized so `P ⪰ I`.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub p: DMatrix<f64>,
    pub sigma: f64,
    pub alpha: f64,
    /// Largest eigenvalue of the assembled LMI at `(P, σ)`.
    pub lmi_max_eig: f64,
    /// Smallest eigenvalue of `P`.
    pub p_min_eig: f64,
}

/// Outcome of an independent certificate recheck.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub pass: bool,
    pub lmi_max_eig: f64,
    pub p_min_eig: f64,
    pub sigma: f64,
}

/// Recomputes the LMI and `P` spectra with the Jacobi eigensolver
/// (independent of the feasibility search) and checks
/// `λ_max(LMI) ≤ 1e-7`, `λ_min(P) ≥ 1 - 1e-6`, `σ ≥ -1e-12`.
pub fn verify_certificate(prob: &LmiProblem, cert: &StabilityCertificate) -> VerifyReport {
    let lmi = assemble_lmi(prob, &cert.p, cert.sigma);
    let lmi_eigs = jacobi_eigenvalues(&lmi);
    let p_eigs = jacobi_eigenvalues(&cert.p);
    let lmi_max_eig = lmi_eigs.last().copied().unwrap_or(f64::NEG_INFINITY);
    let p_min_eig = p_eigs.first().copied().unwrap_or(f64::INFINITY);
    let pass = lmi_max_eig <= 1e-7 && p_min_eig >= 1.0 - 1e-6 && cert.sigma >= -1e-12;
    VerifyReport {
        pass,
        lmi_max_eig,
        p_min_eig,
        sigma: cert.sigma,
    }
}

/// Decides feasibility of the LMI at the problem's fixed `alpha` with
/// `P ⪰ I`, `σ ≥ 0`. A returned certificate has already passed
/// [`verify_certificate`].
pub fn sdp_feasible(prob: &LmiProblem) -> Result<StabilityCertificate, CertifyError> {
    sdp_feasible_warm(prob, None)
}

fn sdp_feasible_warm(
    prob: &LmiProblem,
    warm: Option<(&DMatrix<f64>, f64)>,
) -> Result<StabilityCertificate, CertifyError> {
    if !(prob.alpha > 0.0) {
        return Err(CertifyError::SolverFailure(format!(
            "alpha must be positive, got {}",
            prob.alpha
        )));
    }
    let outcome = sdp::solve_feasibility(prob, warm);
    let point = match outcome {
        sdp::SolveOutcome::Feasible(p) => p,
        sdp::SolveOutcome::Infeasible { best_margin } => {
            return Err(CertifyError::Infeasible { best_margin })
        }
        sdp::SolveOutcome::Failed { reason } => return Err(CertifyError::SolverFailure(reason)),
    };
    let cert = StabilityCertificate {
        sigma: point.sigma,
        alpha: prob.alpha,
        lmi_max_eig: point.lmi_max_eig,
        p_min_eig: 1.0,
        p: point.p,
    };
    let report = verify_certificate(prob, &cert);
    if !report.pass {
        return Err(CertifyError::SolverFailure(format!(
            "certificate failed independent recheck (lmi_max {:.3e}, p_min {:.3e})",
            report.lmi_max_eig, report.p_min_eig
        )));
    }
    Ok(StabilityCertificate {
        lmi_max_eig: report.lmi_max_eig,
        p_min_eig: report.p_min_eig,
        ..cert
    })
}

/// Options of the `α` line search.
#[derive(Debug, Clone)]
pub struct MaxAlphaOptions {
    /// Relative bisection tolerance.
    pub alpha_tol: f64,
    /// First bracket candidate.
    pub alpha_start: f64,
    /// Smallest rate tried before declaring `alpha_max = 0`.
    pub alpha_floor: f64,
    /// Largest rate tried while doubling.
    pub alpha_cap: f64,
}

impl Default for MaxAlphaOptions {
    fn default() -> Self {
        Self {
            alpha_tol: 1e-3,
            alpha_start: 1e-3,
            alpha_floor: 1e-6,
            alpha_cap: 1e3,
        }
    }
}

/// Result of the `α` line search, with the queried `(α, feasible)` trace.
#[derive(Debug, Clone)]
pub struct MaxAlphaResult {
    pub alpha_max: f64,
    pub certificate: Option<StabilityCertificate>,
    pub trace: Vec<(f64, bool)>,
}

/// Builds the optimizer IQC matching the controller configuration.
pub fn optimizer_iqc(cfg: &ControllerConfig, cost: &QuadraticCost) -> Result<PointwiseIqc, CoreError> {
    let (m_sc, l_f) = cost.sector_constants();
    let n = cost.dim();
    match cfg.optimizer {
        OptimizerKind::Phi1 => phi1_iqc(m_sc, l_f, n),
        OptimizerKind::Phi2 => {
            let rho = cfg.rho.ok_or_else(|| {
                CoreError::InvalidParameter("optimizer phi2 requires rho".into())
            })?;
            phi2_iqc(m_sc, l_f, rho, n)
        }
    }
}

/// Maximizes the certified decay rate: bracket by doubling from
/// `alpha_start`, then bisect to relative tolerance. Certificates found at
/// a higher rate are reused directly at lower rates (the LMI left side only
/// decreases), which makes every recorded trace monotone.
pub fn max_alpha(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    cost: &QuadraticCost,
    opts: &MaxAlphaOptions,
) -> Result<MaxAlphaResult, CertifyError> {
    let iqc = optimizer_iqc(cfg, cost)?;
    max_alpha_with_iqc(ss, cfg, &iqc, opts)
}

/// [`max_alpha`] with a caller-supplied optimizer IQC (e.g. to certify with
/// sector information other than the cost's own constants).
pub fn max_alpha_with_iqc(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    iqc: &PointwiseIqc,
    opts: &MaxAlphaOptions,
) -> Result<MaxAlphaResult, CertifyError> {
    let aug = augment(ss, cfg)?;
    let mut trace: Vec<(f64, bool)> = Vec::new();

    let query = |alpha: f64,
                     warm: Option<&StabilityCertificate>,
                     trace: &mut Vec<(f64, bool)>|
     -> Result<Option<StabilityCertificate>, CertifyError> {
        let prob = LmiProblem::from_augmented(&aug, iqc, alpha)?;
        // a certificate from a larger alpha stays valid at a smaller one
        if let Some(c) = warm {
            let candidate = StabilityCertificate {
                alpha,
                ..c.clone()
            };
            let report = verify_certificate(&prob, &candidate);
            if report.pass && report.lmi_max_eig <= 0.0 {
                trace.push((alpha, true));
                return Ok(Some(StabilityCertificate {
                    lmi_max_eig: report.lmi_max_eig,
                    p_min_eig: report.p_min_eig,
                    ..candidate
                }));
            }
        }
        let warm_point = warm.map(|c| (&c.p, c.sigma));
        match sdp_feasible_warm(&prob, warm_point) {
            Ok(cert) => {
                trace.push((alpha, true));
                Ok(Some(cert))
            }
            Err(CertifyError::Infeasible { .. }) => {
                trace.push((alpha, false));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    // find a feasible floor, stepping down by decades
    let mut alpha = opts.alpha_start;
    let mut lo: Option<(f64, StabilityCertificate)> = None;
    while alpha >= opts.alpha_floor * (1.0 - 1e-12) {
        if let Some(cert) = query(alpha, None, &mut trace)? {
            lo = Some((alpha, cert));
            break;
        }
        alpha *= 0.1;
    }
    let Some((mut alpha_lo, mut cert)) = lo else {
        return Ok(MaxAlphaResult {
            alpha_max: 0.0,
            certificate: None,
            trace,
        });
    };

    // double while feasible
    let mut alpha_hi = None;
    let mut a = alpha_lo * 2.0;
    while a <= opts.alpha_cap * (1.0 + 1e-12) {
        match query(a, Some(&cert), &mut trace)? {
            Some(c) => {
                alpha_lo = a;
                cert = c;
                a *= 2.0;
            }
            None => {
                alpha_hi = Some(a);
                break;
            }
        }
    }
    let Some(mut alpha_hi) = alpha_hi else {
        return Ok(MaxAlphaResult {
            alpha_max: alpha_lo,
            certificate: Some(cert),
            trace,
        });
    };

    while (alpha_hi - alpha_lo) / alpha_lo > opts.alpha_tol {
        let mid = 0.5 * (alpha_hi + alpha_lo);
        match query(mid, Some(&cert), &mut trace)? {
            Some(c) => {
                alpha_lo = mid;
                cert = c;
            }
            None => alpha_hi = mid,
        }
    }
    Ok(MaxAlphaResult {
        alpha_max: alpha_lo,
        certificate: Some(cert),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::EstimatorMode;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn scalar_plant() -> StateSpace {
        StateSpace::new(
            DMatrix::from_row_slice(1, 1, &[-5.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.0]),
        )
        .unwrap()
    }

    fn scalar_cfg(optimizer: OptimizerKind, rho: Option<f64>) -> ControllerConfig {
        ControllerConfig {
            l_obs: None,
            k_i: DMatrix::from_row_slice(1, 1, &[1.0]),
            k_p: DMatrix::from_row_slice(1, 1, &[1.0]),
            optimizer,
            rho,
            estimator: EstimatorMode::Bypass,
        }
    }

    fn scalar_cost(q: f64) -> QuadraticCost {
        QuadraticCost::new(
            DMatrix::from_row_slice(1, 1, &[q]),
            DVector::from_row_slice(&[-10.0 * q]),
            0.0,
        )
        .unwrap()
    }

    fn scalar_problem(q: f64, alpha: f64) -> LmiProblem {
        let ss = scalar_plant();
        let cfg = scalar_cfg(OptimizerKind::Phi1, None);
        let aug = augment(&ss, &cfg).unwrap();
        let iqc = optimizer_iqc(&cfg, &scalar_cost(q)).unwrap();
        LmiProblem::from_augmented(&aug, &iqc, alpha).unwrap()
    }

    #[test]
    fn assemble_lyapunov_part_only() {
        let n = 2;
        let prob = LmiProblem::new(
            -DMatrix::<f64>::identity(n, n),
            DMatrix::zeros(n, 1),
            DMatrix::zeros(1, n),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(2, 2),
            1e-30,
        )
        .unwrap();
        // with alpha ≈ 0, sigma = 0, P = I: [[-2I, 0], [0, 0]]
        let m = assemble_lmi(&prob, &DMatrix::identity(n, n), 0.0);
        let mut expected = DMatrix::zeros(3, 3);
        expected
            .view_mut((0, 0), (2, 2))
            .copy_from(&(-2.0 * DMatrix::<f64>::identity(2, 2)));
        assert!((m - expected).amax() <= 1e-12);
    }

    #[test]
    fn assemble_scalar_example_entry() {
        // reduced layout, P = I, sigma = 1, alpha = 0.1, phi1 IQC at q = 2:
        // top-left entry is 2·(-5) + 0.1 + (Q_phi1)_11 = -9.9 - 8 = -17.9
        let prob = scalar_problem(2.0, 0.1);
        let m = assemble_lmi(&prob, &DMatrix::identity(2, 2), 1.0);
        assert_eq!(m.nrows(), 3);
        assert_relative_eq!(m[(0, 0)], -17.9, epsilon = 1e-12);
    }

    #[test]
    fn assemble_is_symmetric() {
        let prob = scalar_problem(1.3, 0.7);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let m = assemble_lmi(&prob, &p, 0.4);
        assert!((&m - m.transpose()).norm() <= 1e-14);
    }

    #[test]
    fn scalar_phi1_feasible_at_small_alpha() {
        let prob = scalar_problem(2.0, 1e-4);
        let cert = sdp_feasible(&prob).unwrap();
        assert!(cert.lmi_max_eig <= 1e-7);
        assert!(cert.p_min_eig >= 1.0 - 1e-6);
        assert!(cert.sigma >= -1e-12);
        assert!(verify_certificate(&prob, &cert).pass);
    }

    #[test]
    fn unstable_plant_infeasible() {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.0]),
        )
        .unwrap();
        let mut cfg = scalar_cfg(OptimizerKind::Phi1, None);
        cfg.k_i = DMatrix::zeros(1, 1);
        cfg.k_p = DMatrix::zeros(1, 1);
        let aug = augment(&ss, &cfg).unwrap();
        let iqc = optimizer_iqc(&cfg, &scalar_cost(1.0)).unwrap();
        for alpha in [1e-4, 1e-2, 1.0] {
            let prob = LmiProblem::from_augmented(&aug, &iqc, alpha).unwrap();
            assert!(matches!(
                sdp_feasible(&prob),
                Err(CertifyError::Infeasible { .. })
            ));
        }
    }

    #[test]
    fn verify_rejects_bad_certificates() {
        let prob = scalar_problem(2.0, 1e-4);
        let good = sdp_feasible(&prob).unwrap();

        let mut neg_p = good.clone();
        neg_p.p = -DMatrix::<f64>::identity(2, 2);
        assert!(!verify_certificate(&prob, &neg_p).pass);

        let mut neg_sigma = good.clone();
        neg_sigma.sigma = -1.0;
        assert!(!verify_certificate(&prob, &neg_sigma).pass);
    }

    #[test]
    fn max_alpha_scalar_phi1() {
        let res = max_alpha(
            &scalar_plant(),
            &scalar_cfg(OptimizerKind::Phi1, None),
            &scalar_cost(2.0),
            &MaxAlphaOptions::default(),
        )
        .unwrap();
        assert!(res.alpha_max > 0.0, "expected a positive certified rate");
        assert!(res.certificate.is_some());
        // trace is monotone: no infeasible alpha below a feasible one
        let feas_max = res
            .trace
            .iter()
            .filter(|(_, f)| *f)
            .map(|(a, _)| *a)
            .fold(0.0, f64::max);
        for (a, f) in &res.trace {
            if !f {
                assert!(*a > feas_max * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn max_alpha_zero_for_uncontrolled_unstable_plant() {
        let ss = StateSpace::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[0.0]),
        )
        .unwrap();
        let mut cfg = scalar_cfg(OptimizerKind::Phi1, None);
        cfg.k_i = DMatrix::zeros(1, 1);
        cfg.k_p = DMatrix::zeros(1, 1);
        let res = max_alpha(&ss, &cfg, &scalar_cost(1.0), &MaxAlphaOptions::default()).unwrap();
        assert_eq!(res.alpha_max, 0.0);
        assert!(res.certificate.is_none());
    }

    #[test]
    fn homogeneity_of_certificates() {
        let prob = scalar_problem(2.0, 1e-3);
        let cert = sdp_feasible(&prob).unwrap();
        let m1 = assemble_lmi(&prob, &cert.p, cert.sigma);
        let m2 = assemble_lmi(&prob, &(&cert.p * 2.0), cert.sigma * 2.0);
        assert!((&m2 - &m1 * 2.0).amax() <= 1e-10 * (1.0 + m1.amax()));
        let max2 = jacobi_eigenvalues(&m2).last().copied().unwrap();
        assert!(max2 <= 1e-9);
    }

    #[test]
    fn bisection_is_reproducible() {
        let run = || {
            max_alpha(
                &scalar_plant(),
                &scalar_cfg(OptimizerKind::Phi2, Some(1.0)),
                &scalar_cost(0.5),
                &MaxAlphaOptions::default(),
            )
            .unwrap()
            .alpha_max
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
