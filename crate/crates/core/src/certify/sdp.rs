//! Semidefinite feasibility by smoothed spectral minimization.
//!
//! For a fixed decay rate the stability LMI is affine in `(P, σ)` and
//! jointly homogeneous, so feasibility with `P ⪰ I`, `σ ≥ 0` is decided by
//! minimizing the largest eigenvalue of
//! `blkdiag(LMI(P, σ), I - P, -σ)` over the free variables. The max
//! eigenvalue is smoothed with a log-sum-exp of the spectrum (temperature
//! continuation) and minimized with L-BFGS; the exact spectrum is checked
//! every iteration so a strictly feasible point exits early.
//!
//! Everything here is deterministic: fixed initial point, fixed schedule,
//! no randomness.

use nalgebra::{DMatrix, DVector};

use super::LmiProblem;

#[derive(Debug, Clone)]
pub struct FeasiblePoint {
    pub p: DMatrix<f64>,
    pub sigma: f64,
    /// `λ_max` of the LMI at the normalized point (`λ_min(P) = 1`).
    pub lmi_max_eig: f64,
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Feasible(FeasiblePoint),
    /// Best scale-invariant margin `λ_max(LMI)/λ_min(P)` achieved.
    Infeasible { best_margin: f64 },
    Failed { reason: String },
}

/// Scale-invariant acceptance margin for a strictly feasible point.
const ACCEPT_MARGIN: f64 = -1e-8;

struct Workspace<'a> {
    prob: &'a LmiProblem,
    /// `[[Ĉᵀ, 0], [D̂ᵀ, I]] Q [[Ĉ, D̂], [0, I]]`, the σ-coefficient.
    iqc_outer: DMatrix<f64>,
    n: usize,
    k: usize,
    nvars: usize,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a LmiProblem) -> Self {
        let n = prob.ahat.nrows();
        let k = prob.chat.nrows();
        let iqc_outer = prob.iqc_outer();
        let nvars = n * (n + 1) / 2 + 1;
        Self {
            prob,
            iqc_outer,
            n,
            k,
            nvars,
        }
    }

    fn unpack(&self, v: &DVector<f64>) -> (DMatrix<f64>, f64) {
        let n = self.n;
        let mut p = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                p[(i, j)] = v[idx];
                p[(j, i)] = v[idx];
                idx += 1;
            }
        }
        (p, v[idx])
    }

    fn pack(&self, p: &DMatrix<f64>, sigma: f64) -> DVector<f64> {
        let n = self.n;
        let mut v = DVector::zeros(self.nvars);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                v[idx] = 0.5 * (p[(i, j)] + p[(j, i)]);
                idx += 1;
            }
        }
        v[idx] = sigma;
        v
    }

    fn lmi(&self, p: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
        let n = self.n;
        let k = self.k;
        let mut m = DMatrix::zeros(n + k, n + k);
        let top = self.prob.ahat.transpose() * p + p * &self.prob.ahat + p * self.prob.alpha;
        let pb = p * &self.prob.bhat;
        m.view_mut((0, 0), (n, n)).copy_from(&top);
        m.view_mut((0, n), (n, k)).copy_from(&pb);
        m.view_mut((n, 0), (k, n)).copy_from(&pb.transpose());
        m += &self.iqc_outer * sigma;
        (&m + m.transpose()) * 0.5
    }

    /// Exact block spectra at `v`: (λ_max of LMI, λ_min of P, σ).
    fn hard_values(&self, v: &DVector<f64>) -> (f64, f64, f64) {
        let (p, sigma) = self.unpack(v);
        let lmi_max = self.lmi(&p, sigma).symmetric_eigen().eigenvalues.max();
        let p_min = p.symmetric_eigen().eigenvalues.min();
        (lmi_max, p_min, sigma)
    }

    /// Smoothed objective `μ·logΣexp(λ_i/μ)` over the stacked spectrum of
    /// `blkdiag(LMI, I - P, -σ)` and its gradient.
    fn eval(&self, v: &DVector<f64>, mu: f64) -> (f64, DVector<f64>) {
        let n = self.n;
        let k = self.k;
        let (p, sigma) = self.unpack(v);
        let lmi = self.lmi(&p, sigma);
        let eig_lmi = lmi.symmetric_eigen();
        let slack = DMatrix::identity(n, n) - &p;
        let eig_p = slack.symmetric_eigen();

        let mut lambdas: Vec<f64> = Vec::with_capacity(n + k + n + 1);
        lambdas.extend(eig_lmi.eigenvalues.iter());
        lambdas.extend(eig_p.eigenvalues.iter());
        lambdas.push(-sigma);
        let lmax = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lambdas.iter().map(|l| ((l - lmax) / mu).exp()).sum();
        let value = lmax + mu * z.ln();

        // softmax weights per block
        let w_of = |l: f64| ((l - lmax) / mu).exp() / z;
        let nk = n + k;
        let mut w1 = DMatrix::zeros(nk, nk);
        for (i, l) in eig_lmi.eigenvalues.iter().enumerate() {
            let u = eig_lmi.eigenvectors.column(i);
            w1 += u * u.transpose() * w_of(*l);
        }
        let mut w2 = DMatrix::zeros(n, n);
        for (i, l) in eig_p.eigenvalues.iter().enumerate() {
            let u = eig_p.eigenvectors.column(i);
            w2 += u * u.transpose() * w_of(*l);
        }
        let w3 = w_of(-sigma);

        // dF/dP from tr(W1 · dLMI) and tr(W2 · d(I - P))
        let w11 = w1.view((0, 0), (n, n)).clone_owned();
        let w12 = w1.view((0, n), (n, k)).clone_owned();
        let mut gp = &self.prob.ahat * &w11
            + &w11 * self.prob.ahat.transpose()
            + &w11 * self.prob.alpha
            + &self.prob.bhat * w12.transpose()
            + &w12 * self.prob.bhat.transpose()
            - &w2;
        gp = (&gp + gp.transpose()) * 0.5;

        let gsigma = (&w1 * &self.iqc_outer).trace() - w3;

        let mut grad = DVector::zeros(self.nvars);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                grad[idx] = if i == j { gp[(i, i)] } else { 2.0 * gp[(i, j)] };
                idx += 1;
            }
        }
        grad[idx] = gsigma;
        (value, grad)
    }
}

/// L-BFGS with Armijo backtracking on the smoothed objective, with
/// temperature continuation. Exits as soon as the exact spectrum shows a
/// strictly feasible point.
pub fn solve_feasibility(prob: &LmiProblem, warm: Option<(&DMatrix<f64>, f64)>) -> SolveOutcome {
    let ws = Workspace::new(prob);
    let mut v = match warm {
        Some((p, sigma)) => ws.pack(p, sigma.max(0.0)),
        None => ws.pack(&DMatrix::identity(ws.n, ws.n), 1.0),
    };

    let mut best_margin = f64::INFINITY;
    let check = |v: &DVector<f64>, best: &mut f64| -> Option<FeasiblePoint> {
        let (lmi_max, p_min, sigma) = ws.hard_values(v);
        if p_min > 0.0 && sigma >= 0.0 {
            let margin = lmi_max / p_min;
            if margin < *best {
                *best = margin;
            }
            if margin <= ACCEPT_MARGIN {
                let (p, sigma) = ws.unpack(v);
                let s = 1.0 / p_min;
                return Some(FeasiblePoint {
                    p: p * s,
                    sigma: sigma * s,
                    lmi_max_eig: lmi_max * s,
                });
            }
        }
        None
    };

    if let Some(found) = check(&v, &mut best_margin) {
        return SolveOutcome::Feasible(found);
    }

    let (lmi_max0, _, _) = ws.hard_values(&v);
    let scale0 = 1.0 + lmi_max0.abs();

    const STAGES: usize = 9;
    const MAX_ITERS: usize = 400;
    const MEMORY: usize = 10;

    for stage in 0..STAGES {
        let mu = scale0 * 0.1 * 0.2f64.powi(stage as i32);
        let (mut f, mut g) = ws.eval(&v, mu);
        if !f.is_finite() {
            return SolveOutcome::Failed {
                reason: "non-finite objective".into(),
            };
        }
        let mut s_hist: Vec<DVector<f64>> = Vec::new();
        let mut y_hist: Vec<DVector<f64>> = Vec::new();

        for _iter in 0..MAX_ITERS {
            let gnorm = g.norm();
            if gnorm <= 1e-10 * (1.0 + f.abs()) {
                break;
            }
            // two-loop recursion
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(s_hist.len());
            for (s, y) in s_hist.iter().zip(&y_hist).rev() {
                let rho = 1.0 / y.dot(s);
                let a = rho * s.dot(&q);
                q -= y * a;
                alphas.push((a, rho));
            }
            if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
                let gamma = s.dot(y) / y.dot(y);
                q *= gamma;
            } else {
                q *= 1.0 / gnorm.max(1.0);
            }
            for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.iter().rev()) {
                let b = rho * y.dot(&q);
                q += s * (a - b);
            }
            let dir = -q;
            let dg = g.dot(&dir);
            let dir = if dg >= 0.0 { -g.clone() } else { dir };
            let dg = g.dot(&dir);

            // Armijo backtracking
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let cand = &v + &dir * t;
                let (fc, gc) = ws.eval(&cand, mu);
                if fc.is_finite() && fc <= f + 1e-4 * t * dg {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                t *= 0.5;
            }
            let Some((vn, fn_, gn)) = accepted else { break };

            let s = &vn - &v;
            let y = &gn - &g;
            if s.dot(&y) > 1e-12 * s.norm() * y.norm() {
                s_hist.push(s);
                y_hist.push(y);
                if s_hist.len() > MEMORY {
                    s_hist.remove(0);
                    y_hist.remove(0);
                }
            }
            v = vn;
            f = fn_;
            g = gn;

            if let Some(found) = check(&v, &mut best_margin) {
                return SolveOutcome::Feasible(found);
            }
        }
    }

    if best_margin.is_finite() {
        SolveOutcome::Infeasible { best_margin }
    } else {
        SolveOutcome::Infeasible {
            best_margin: f64::INFINITY,
        }
    }
}
