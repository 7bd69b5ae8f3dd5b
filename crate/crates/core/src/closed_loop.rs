//! Closed-loop assembly and simulation: the augmented LTI matrices of the
//! interconnection, its equilibrium, the nonlinear right-hand side, and a
//! fixed-step RK4 integrator with piecewise-constant disturbances.

use nalgebra::{DMatrix, DVector};

use crate::controller::{observer_rhs, ControllerConfig, EstimatorMode};
use crate::error::{Error, Result};
use crate::model::{lstsq, steady_state_input, DisturbanceSchedule, QuadraticCost, StateSpace};

/// State ordering of the augmented system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `ξ = [x; x̂; e_I]`, dimension `3n`.
    Full,
    /// Estimator bypass, `ξ = [x; e_I]`, dimension `2n`.
    Reduced,
}

/// The linear part of the interconnection:
/// `ξ̇ = Â ξ + B̂_e e + B̂_w w`, `z = Ĉ ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub ahat: DMatrix<f64>,
    pub bhat_e: DMatrix<f64>,
    pub bhat_w: DMatrix<f64>,
    pub chat: DMatrix<f64>,
    pub layout: Layout,
    /// Plant state dimension `n`.
    pub n: usize,
    /// Plant input dimension `m`.
    pub m: usize,
}

impl AugmentedSystem {
    /// Augmented state dimension (`3n` full, `2n` reduced).
    pub fn dim(&self) -> usize {
        self.ahat.nrows()
    }
}

/// Builds the augmented LTI matrices for a plant/controller pair.
///
/// Full layout: `Â = [[A, 0, B K_I], [L C, A - L C, B K_I], [0, 0, 0]]`,
/// `B̂_e = [B K_P; B K_P; I]`, `B̂_w = [B; B; 0]`, `Ĉ = [0, I, 0]`.
/// Reduced layout drops the observer rows and reads `z = x`.
pub fn augment(ss: &StateSpace, cfg: &ControllerConfig) -> Result<AugmentedSystem> {
    cfg.validate(ss)?;
    let (wellposed, reason) = crate::controller::wellposedness_check(ss, cfg);
    if !wellposed {
        return Err(Error::IllPosed(reason));
    }
    let n = ss.n;
    let m = ss.m;
    let bki = &ss.b * &cfg.k_i;
    let bkp = &ss.b * &cfg.k_p;
    match cfg.estimator {
        EstimatorMode::Bypass => {
            if (&ss.c - DMatrix::<f64>::identity(n, n)).amax() > 1e-12 || ss.d.amax() > 0.0 {
                return Err(Error::IllPosed(
                    "estimator bypass requires C = I and D = 0".into(),
                ));
            }
            let mut ahat = DMatrix::zeros(2 * n, 2 * n);
            ahat.view_mut((0, 0), (n, n)).copy_from(&ss.a);
            ahat.view_mut((0, n), (n, n)).copy_from(&bki);
            let mut bhat_e = DMatrix::zeros(2 * n, n);
            bhat_e.view_mut((0, 0), (n, n)).copy_from(&bkp);
            bhat_e
                .view_mut((n, 0), (n, n))
                .copy_from(&DMatrix::identity(n, n));
            let mut bhat_w = DMatrix::zeros(2 * n, m);
            bhat_w.view_mut((0, 0), (n, m)).copy_from(&ss.b);
            let mut chat = DMatrix::zeros(n, 2 * n);
            chat.view_mut((0, 0), (n, n))
                .copy_from(&DMatrix::identity(n, n));
            Ok(AugmentedSystem {
                ahat,
                bhat_e,
                bhat_w,
                chat,
                layout: Layout::Reduced,
                n,
                m,
            })
        }
        EstimatorMode::Observer => {
            let l = cfg.l_obs.as_ref().expect("validated above");
            let lc = l * &ss.c;
            let alc = &ss.a - &lc;
            let mut ahat = DMatrix::zeros(3 * n, 3 * n);
            ahat.view_mut((0, 0), (n, n)).copy_from(&ss.a);
            ahat.view_mut((0, 2 * n), (n, n)).copy_from(&bki);
            ahat.view_mut((n, 0), (n, n)).copy_from(&lc);
            ahat.view_mut((n, n), (n, n)).copy_from(&alc);
            ahat.view_mut((n, 2 * n), (n, n)).copy_from(&bki);
            let mut bhat_e = DMatrix::zeros(3 * n, n);
            bhat_e.view_mut((0, 0), (n, n)).copy_from(&bkp);
            bhat_e.view_mut((n, 0), (n, n)).copy_from(&bkp);
            bhat_e
                .view_mut((2 * n, 0), (n, n))
                .copy_from(&DMatrix::identity(n, n));
            let mut bhat_w = DMatrix::zeros(3 * n, m);
            bhat_w.view_mut((0, 0), (n, m)).copy_from(&ss.b);
            bhat_w.view_mut((n, 0), (n, m)).copy_from(&ss.b);
            let mut chat = DMatrix::zeros(n, 3 * n);
            chat.view_mut((0, n), (n, n))
                .copy_from(&DMatrix::identity(n, n));
            Ok(AugmentedSystem {
                ahat,
                bhat_e,
                bhat_w,
                chat,
                layout: Layout::Full,
                n,
                m,
            })
        }
    }
}

/// Equilibrium of the interconnection for a given disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x_star: DVector<f64>,
    pub z_star: DVector<f64>,
    pub e_i_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub w: DVector<f64>,
}

impl Equilibrium {
    /// Stacks the equilibrium into the augmented state ordering.
    pub fn xi(&self, layout: Layout) -> DVector<f64> {
        let n = self.x_star.len();
        match layout {
            Layout::Full => {
                let mut xi = DVector::zeros(3 * n);
                xi.rows_mut(0, n).copy_from(&self.x_star);
                xi.rows_mut(n, n).copy_from(&self.x_star);
                xi.rows_mut(2 * n, n).copy_from(&self.e_i_star);
                xi
            }
            Layout::Reduced => {
                let mut xi = DVector::zeros(2 * n);
                xi.rows_mut(0, n).copy_from(&self.x_star);
                xi.rows_mut(n, n).copy_from(&self.e_i_star);
                xi
            }
        }
    }
}

/// Constructs the equilibrium: `x* = argmin f`, `u*` from the steady-state
/// equation, `e_I*` from `K_I e_I = u* - w`.
///
/// Fails with a named residual when either the steady-state equation or the
/// integral-gain equation is unsolvable.
pub fn equilibrium(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    cost: &QuadraticCost,
    w: &DVector<f64>,
) -> Result<Equilibrium> {
    if w.len() != ss.m {
        return Err(Error::Dimension(format!(
            "disturbance has length {}, expected {}",
            w.len(),
            ss.m
        )));
    }
    let x_star = cost.minimizer()?;
    if x_star.len() != ss.n {
        return Err(Error::Dimension(format!(
            "cost dimension {} does not match plant state dimension {}",
            x_star.len(),
            ss.n
        )));
    }
    let (u_star, residual) = steady_state_input(ss, &x_star);
    let ax = (&ss.a * &x_star).norm();
    if residual > 1e-8 * (1.0 + ax) {
        return Err(Error::EquilibriumUnsolvable {
            which: "steady-state controllability (Assumption on A x* + B u* = 0)",
            residual,
        });
    }
    let target = &u_star - w;
    let e_i_star = lstsq(&cfg.k_i, &target);
    let ki_res = (&cfg.k_i * &e_i_star - &target).norm();
    if ki_res > 1e-8 * (1.0 + target.norm()) {
        return Err(Error::EquilibriumUnsolvable {
            which: "integral gain equation K_I e_I = u* - w",
            residual: ki_res,
        });
    }
    Ok(Equilibrium {
        z_star: x_star.clone(),
        x_star,
        e_i_star,
        u_star,
        w: w.clone(),
    })
}

/// Splits the augmented state into plant and controller parts and evaluates
/// the nonlinear right-hand side with an explicit disturbance value.
fn rhs_with_w(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    cost: &QuadraticCost,
    xi: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, AuxRecord)> {
    let n = ss.n;
    let x = xi.rows(0, n).clone_owned();
    match cfg.estimator {
        EstimatorMode::Bypass => {
            let e_i = xi.rows(n, n).clone_owned();
            let z = x.clone();
            let e = cfg.optimizer_eval(cost, &z)?;
            let r = crate::controller::driver_output(&cfg.k_i, &cfg.k_p, &e_i, &e);
            let u = &r + w;
            let y = &ss.c * &x + &ss.d * &u;
            let xdot = &ss.a * &x + &ss.b * &u;
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&xdot);
            out.rows_mut(n, n).copy_from(&e);
            Ok((
                out,
                AuxRecord {
                    y,
                    z,
                    e,
                    r,
                    u,
                    w: w.clone(),
                },
            ))
        }
        EstimatorMode::Observer => {
            let xhat = xi.rows(n, n).clone_owned();
            let e_i = xi.rows(2 * n, n).clone_owned();
            let z = xhat.clone();
            let e = cfg.optimizer_eval(cost, &z)?;
            let r = crate::controller::driver_output(&cfg.k_i, &cfg.k_p, &e_i, &e);
            let u = &r + w;
            let y = &ss.c * &x + &ss.d * &u;
            let l = cfg.l_obs.as_ref().expect("observer mode requires L_obs");
            let xdot = &ss.a * &x + &ss.b * &u;
            let xhat_dot = observer_rhs(ss, l, &xhat, &u, &y);
            let mut out = DVector::zeros(3 * n);
            out.rows_mut(0, n).copy_from(&xdot);
            out.rows_mut(n, n).copy_from(&xhat_dot);
            out.rows_mut(2 * n, n).copy_from(&e);
            Ok((
                out,
                AuxRecord {
                    y,
                    z,
                    e,
                    r,
                    u,
                    w: w.clone(),
                },
            ))
        }
    }
}

/// Nonlinear closed-loop right-hand side at time `t`, with the disturbance
/// read from the schedule.
pub fn closed_loop_rhs(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    cost: &QuadraticCost,
    schedule: &DisturbanceSchedule,
    t: f64,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let w = schedule.value_at(t);
    Ok(rhs_with_w(ss, cfg, cost, xi, w)?.0)
}

/// Per-step signal record.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxRecord {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub e: DVector<f64>,
    pub r: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
}

/// A simulated trajectory on a uniform time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub aux: Vec<AuxRecord>,
    pub dt: f64,
}

const DIVERGENCE_NORM: f64 = 1e9;

/// Classical fixed-step RK4 over `[0, T]`.
///
/// Disturbance switch times must fall on the step grid (an integer multiple
/// of `dt`); the step starting at a switch uses the new value throughout,
/// so each RK4 step integrates a smooth piece.
pub fn simulate(
    ss: &StateSpace,
    cfg: &ControllerConfig,
    cost: &QuadraticCost,
    schedule: &DisturbanceSchedule,
    xi0: &DVector<f64>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_final >= dt) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and T >= dt, got dt = {dt}, T = {t_final}"
        )));
    }
    for (ts, _) in schedule.entries() {
        let steps = ts / dt;
        if (steps - steps.round()).abs() > 1e-9 * (1.0 + steps.abs()) {
            return Err(Error::InvalidParameter(format!(
                "disturbance switch at t = {ts} is not an integer multiple of dt = {dt}"
            )));
        }
    }
    let n_steps = (t_final / dt).round() as usize;
    let mut xi = xi0.clone();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut aux = Vec::with_capacity(n_steps + 1);

    let record =
        |t: f64, xi: &DVector<f64>, times: &mut Vec<f64>, states: &mut Vec<DVector<f64>>, aux: &mut Vec<AuxRecord>| -> Result<()> {
            let w = schedule.value_at(t);
            let (_, a) = rhs_with_w(ss, cfg, cost, xi, w)?;
            times.push(t);
            states.push(xi.clone());
            aux.push(a);
            Ok(())
        };

    record(0.0, &xi, &mut times, &mut states, &mut aux)?;
    for step in 0..n_steps {
        let t = step as f64 * dt;
        // constant on [t, t+dt): one lookup per step keeps RK4 order
        let w = schedule.value_at(t).clone();
        let k1 = rhs_with_w(ss, cfg, cost, &xi, &w)?.0;
        let k2 = rhs_with_w(ss, cfg, cost, &(&xi + &k1 * (dt / 2.0)), &w)?.0;
        let k3 = rhs_with_w(ss, cfg, cost, &(&xi + &k2 * (dt / 2.0)), &w)?.0;
        let k4 = rhs_with_w(ss, cfg, cost, &(&xi + &k3 * dt), &w)?.0;
        xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let t_next = (step + 1) as f64 * dt;
        if xi.norm() > DIVERGENCE_NORM || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                t: t_next,
                partial: Trajectory {
                    times,
                    states,
                    aux,
                    dt,
                },
            });
        }
        record(t_next, &xi, &mut times, &mut states, &mut aux)?;
    }
    Ok(Trajectory {
        times,
        states,
        aux,
        dt,
    })
}

/// Fits the exponential decay rate of `‖ξ(t) - ξ*‖` by least squares on
/// `log` scale, over the window where the error lies in
/// `[1e-6, 1e-1]` times its initial value. Returns the norm decay rate
/// (positive for a converging trajectory).
pub fn decay_rate_estimate(traj: &Trajectory, xi_star: &DVector<f64>) -> Result<f64> {
    if traj.states.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let errs: Vec<f64> = traj.states.iter().map(|s| (s - xi_star).norm()).collect();
    let e0 = errs[0];
    let last = *errs.last().unwrap();
    if !(last < e0) {
        return Err(Error::EmptyWindow);
    }
    let (lo, hi) = (1e-6 * e0, 1e-1 * e0);
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, e) in traj.times.iter().zip(&errs) {
        if *e >= lo && *e <= hi && *e > 0.0 {
            ts.push(*t);
            ys.push(e.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    // least-squares slope
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in ts.iter().zip(&ys) {
        num += (t - tm) * (y - ym);
        den += (t - tm) * (t - tm);
    }
    if den == 0.0 {
        return Err(Error::EmptyWindow);
    }
    Ok(-num / den)
}
