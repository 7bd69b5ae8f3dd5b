//! The three feedback blocks: estimator (Luenberger observer), optimizer
//! (gradient descent `φ₁` or proximal tracking `φ₂`), and PI driver, plus
//! the well-posedness rule for their interconnection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{hurwitz_margin, GradientOracle, QuadraticCost, StateSpace};

/// Which optimizer block produces the drift signal `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// `φ₁ = -∇f`
    Phi1,
    /// `φ₂ = Π_{ρf} - I`
    Phi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Luenberger observer with gain `L_obs`.
    Observer,
    /// `z = x` directly; requires `C = I` and `D = 0`.
    Bypass,
}

/// Gains and optimizer selection for the feedback interconnection.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Observer gain, `n×p`. Required in [`EstimatorMode::Observer`].
    pub l_obs: Option<DMatrix<f64>>,
    /// Integral gain, `m×n`.
    pub k_i: DMatrix<f64>,
    /// Proportional gain, `m×n`.
    pub k_p: DMatrix<f64>,
    pub optimizer: OptimizerKind,
    /// Proximal parameter, required iff `optimizer = Phi2`.
    pub rho: Option<f64>,
    pub estimator: EstimatorMode,
}

impl ControllerConfig {
    /// Checks the config against a plant: gain dimensions, observer
    /// Hurwitz condition, and `rho > 0` for `φ₂`.
    pub fn validate(&self, ss: &StateSpace) -> Result<()> {
        for (name, g) in [("K_I", &self.k_i), ("K_P", &self.k_p)] {
            if g.nrows() != ss.m || g.ncols() != ss.n {
                return Err(Error::Dimension(format!(
                    "{name} must be {}x{}, got {}x{}",
                    ss.m,
                    ss.n,
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
        match self.estimator {
            EstimatorMode::Observer => {
                let l = self.l_obs.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("observer mode requires L_obs".into())
                })?;
                if l.nrows() != ss.n || l.ncols() != ss.p {
                    return Err(Error::Dimension(format!(
                        "L_obs must be {}x{}, got {}x{}",
                        ss.n,
                        ss.p,
                        l.nrows(),
                        l.ncols()
                    )));
                }
                let margin = hurwitz_margin(&(&ss.a - l * &ss.c))?;
                if margin >= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "A - L_obs C is not Hurwitz (margin {margin:.3e})"
                    )));
                }
            }
            EstimatorMode::Bypass => {}
        }
        if self.optimizer == OptimizerKind::Phi2 {
            match self.rho {
                Some(r) if r > 0.0 => {}
                _ => {
                    return Err(Error::InvalidParameter(
                        "optimizer phi2 requires rho > 0".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Evaluates the configured optimizer block at `z`.
    pub fn optimizer_eval(&self, cost: &QuadraticCost, z: &DVector<f64>) -> Result<DVector<f64>> {
        match self.optimizer {
            OptimizerKind::Phi1 => Ok(phi1_eval(cost, z)),
            OptimizerKind::Phi2 => {
                let rho = self.rho.ok_or_else(|| {
                    Error::InvalidParameter("optimizer phi2 requires rho".into())
                })?;
                phi2_eval(cost, rho, z)
            }
        }
    }
}

/// Internal state of the feedback dynamics: observer state and integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackState {
    pub xhat: DVector<f64>,
    pub e_i: DVector<f64>,
}

/// Observer dynamics `(A - L C) x̂ + (B - L D) u + L y`.
pub fn observer_rhs(
    ss: &StateSpace,
    l_obs: &DMatrix<f64>,
    xhat: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    (&ss.a - l_obs * &ss.c) * xhat + (&ss.b - l_obs * &ss.d) * u + l_obs * y
}

/// Gradient-descent optimizer `φ₁(z) = -∇f(z)`.
pub fn phi1_eval(cost: &QuadraticCost, z: &DVector<f64>) -> DVector<f64> {
    -cost.gradient(z)
}

/// Proximal map of a quadratic cost, closed form: solves
/// `(I + ρQ)v = p - ρc`.
pub fn prox_eval(cost: &QuadraticCost, rho: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let n = cost.dim();
    let lhs = DMatrix::identity(n, n) + &cost.q * rho;
    let rhs = p - &cost.c * rho;
    lhs.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::Singular("I + rho Q is numerically singular".into()))
}

/// Proximal map of a gradient-oracle cost via damped Newton on the
/// optimality condition `∇f(v) + (v - p)/ρ = 0`, with a finite-difference
/// Jacobian. Converges to residual `1e-10·(1+‖p‖)`, capped at 100 steps.
pub fn prox_eval_oracle(
    oracle: &GradientOracle<'_>,
    rho: f64,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let n = oracle.dim;
    let residual = |v: &DVector<f64>| (oracle.grad)(v) + (v - p) / rho;
    let tol = 1e-10 * (1.0 + p.norm());
    let mut v = p.clone();
    for _ in 0..100 {
        let r = residual(&v);
        if r.norm() <= tol {
            return Ok(v);
        }
        // finite-difference Jacobian of the residual map
        let h = 1e-7 * (1.0 + v.norm());
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut vj = v.clone();
            vj[j] += h;
            jac.set_column(j, &((residual(&vj) - &r) / h));
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Singular("singular Jacobian in proximal Newton".into()))?;
        // damping: halve until the residual norm decreases
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &v - &step * t;
            if residual(&cand).norm() < r.norm() {
                v = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence("proximal Newton line search"));
        }
    }
    if residual(&v).norm() <= tol {
        Ok(v)
    } else {
        Err(Error::NoConvergence("proximal Newton"))
    }
}

/// Proximal-tracking optimizer `φ₂(z) = Π_{ρf}(z) - z`.
pub fn phi2_eval(cost: &QuadraticCost, rho: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(prox_eval(cost, rho, z)? - z)
}

/// PI driver output `r = K_I e_I + K_P e`; the integrator obeys `ė_I = e`.
pub fn driver_output(
    k_i: &DMatrix<f64>,
    k_p: &DMatrix<f64>,
    e_i: &DVector<f64>,
    e: &DVector<f64>,
) -> DVector<f64> {
    k_i * e_i + k_p * e
}

/// Checks well-posedness of the interconnection: false exactly when the
/// estimator is bypassed, `D ≠ 0`, and `K_P ≠ 0` (algebraic loop through
/// the feedthrough); true otherwise.
pub fn wellposedness_check(ss: &StateSpace, cfg: &ControllerConfig) -> (bool, String) {
    let d_nonzero = ss.d.amax() > 0.0;
    let kp_nonzero = cfg.k_p.amax() > 0.0;
    if cfg.estimator == EstimatorMode::Bypass && d_nonzero && kp_nonzero {
        (
            false,
            "estimator bypass with D != 0 and K_P != 0 creates an algebraic loop".into(),
        )
    } else if cfg.estimator == EstimatorMode::Observer {
        (true, "well-posed: r depends only on the controller state".into())
    } else {
        (true, "well-posed".into())
    }
}
