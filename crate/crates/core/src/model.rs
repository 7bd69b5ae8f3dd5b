//! LTI plant and cost models.
//!
//! Holds the state-space plant `ẋ = Ax + Bu, y = Cx + Du`, the quadratic
//! cost `f(x) = ½xᵀQx + cᵀx + v` with its sector constants, and the
//! structural checks (observability, controllability, Hurwitz margins,
//! steady-state controllability) that the stability results rely on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rank of a matrix by singular value thresholding.
pub fn matrix_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 || !smax.is_finite() {
        return 0;
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Least-squares solve of `M x = b` via SVD. Returns the minimum-norm solution.
pub fn lstsq(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = if smax > 0.0 {
        smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON
    } else {
        f64::EPSILON
    };
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(m.ncols()))
}

/// The LTI plant `ẋ = Ax + Bu, y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// State dimension.
    pub n: usize,
    /// Input dimension.
    pub m: usize,
    /// Output dimension.
    pub p: usize,
}

impl StateSpace {
    /// Builds a plant, inferring `(n, m, p)` from the matrix shapes and
    /// rejecting inconsistent or non-finite data.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let ss = Self::with_dims(a, b, c, d, n, m, p);
        let report = validate_state_space(&ss);
        if !report.ok() {
            return Err(report.into_error());
        }
        Ok(ss)
    }

    /// Builds a plant with declared dimensions, without validation. Use
    /// [`validate_state_space`] to obtain a report afterwards.
    pub fn with_dims(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        n: usize,
        m: usize,
        p: usize,
    ) -> Self {
        Self { a, b, c, d, n, m, p }
    }
}

/// One problem found while validating a plant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    DimensionMismatch(String),
    NonFinite(String),
}

/// Report-style output of [`validate_state_space`].
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty()
    }

    fn into_error(self) -> Error {
        let msgs: Vec<String> = self
            .issues
            .iter()
            .map(|i| match i {
                ValidationIssue::DimensionMismatch(s) => s.clone(),
                ValidationIssue::NonFinite(s) => s.clone(),
            })
            .collect();
        if self
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::NonFinite(_)))
        {
            Error::NonFinite(msgs.join("; "))
        } else {
            Error::Dimension(msgs.join("; "))
        }
    }
}

/// Checks matrix shapes against the declared `(n, m, p)` and flags
/// non-finite entries. Never fails; the report lists every issue found.
pub fn validate_state_space(ss: &StateSpace) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut dim = |name: &str, rows: usize, cols: usize, er: usize, ec: usize| {
        if rows != er || cols != ec {
            report.issues.push(ValidationIssue::DimensionMismatch(format!(
                "{name} is {rows}x{cols}, expected {er}x{ec}"
            )));
        }
    };
    dim("A", ss.a.nrows(), ss.a.ncols(), ss.n, ss.n);
    dim("B", ss.b.nrows(), ss.b.ncols(), ss.n, ss.m);
    dim("C", ss.c.nrows(), ss.c.ncols(), ss.p, ss.n);
    dim("D", ss.d.nrows(), ss.d.ncols(), ss.p, ss.m);
    for (name, mat) in [("A", &ss.a), ("B", &ss.b), ("C", &ss.c), ("D", &ss.d)] {
        if mat.iter().any(|x| !x.is_finite()) {
            report
                .issues
                .push(ValidationIssue::NonFinite(format!("{name} has a non-finite entry")));
        }
    }
    report
}

/// Rank of the Kalman observability matrix `[C; CA; ...; CA^{n-1}]`.
/// The plant is observable iff the result equals `n`.
pub fn observability_rank(ss: &StateSpace) -> usize {
    let n = ss.n;
    let mut rows = DMatrix::zeros(ss.p * n, n);
    let mut block = ss.c.clone();
    for k in 0..n {
        rows.view_mut((k * ss.p, 0), (ss.p, n)).copy_from(&block);
        block = &block * &ss.a;
    }
    matrix_rank(&rows)
}

/// Rank of the controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(ss: &StateSpace) -> usize {
    let n = ss.n;
    let mut cols = DMatrix::zeros(n, ss.m * n);
    let mut block = ss.b.clone();
    for k in 0..n {
        cols.view_mut((0, k * ss.m), (n, ss.m)).copy_from(&block);
        block = &ss.a * &block;
    }
    matrix_rank(&cols)
}

/// Largest real part over the eigenvalues of a square matrix.
/// The matrix is Hurwitz iff the result is negative.
pub fn hurwitz_margin(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "hurwitz_margin needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hurwitz_margin input".into()));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Least-squares steady-state input for a target state: solves
/// `B u = -A x_*` and reports the residual `‖A x_* + B u_*‖`.
///
/// Steady-state controllability holds for this `x_*` iff the residual is
/// at most `1e-8 * (1 + ‖A x_*‖)`.
pub fn steady_state_input(ss: &StateSpace, x_star: &DVector<f64>) -> (DVector<f64>, f64) {
    let ax = &ss.a * x_star;
    let u = lstsq(&ss.b, &(-&ax));
    let residual = (&ax + &ss.b * &u).norm();
    (u, residual)
}

/// Quadratic cost `f(x) = ½xᵀQx + cᵀx + v` with its sector constants.
///
/// `m_sc` and `l_f` are the extreme eigenvalues of `Q`: the strong-convexity
/// constant and the Lipschitz constant of the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Constant offset, ignored by gradients.
    pub v: f64,
    pub m_sc: f64,
    pub l_f: f64,
}

impl QuadraticCost {
    /// Builds a cost, checking symmetry of `Q` (relative tolerance 1e-12)
    /// and positive definiteness. The stored `Q` is symmetrized.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>, v: f64) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::Dimension(format!(
                "Q must be square, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if c.len() != q.nrows() {
            return Err(Error::Dimension(format!(
                "c has length {}, expected {}",
                c.len(),
                q.nrows()
            )));
        }
        if q.iter().any(|x| !x.is_finite()) || c.iter().any(|x| !x.is_finite()) || !v.is_finite() {
            return Err(Error::NonFinite("QuadraticCost data".into()));
        }
        let asym = (&q - q.transpose()).norm();
        if asym > 1e-12 * (1.0 + q.norm()) {
            return Err(Error::InvalidParameter(format!(
                "Q is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        let q = (&q + q.transpose()) * 0.5;
        let eig = q.clone().symmetric_eigen();
        let m_sc = eig.eigenvalues.min();
        let l_f = eig.eigenvalues.max();
        if m_sc <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Q must be positive definite (smallest eigenvalue {m_sc:.3e})"
            )));
        }
        Ok(Self { q, c, v, m_sc, l_f })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// Gradient `∇f(x) = Qx + c`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x))) + self.c.dot(x) + self.v
    }

    /// Unique minimizer, the solution of `Qx = -c`.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        self.q
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&self.c)))
            .ok_or_else(|| Error::Singular("Q is numerically singular".into()))
    }

    /// Extreme eigenvalues of `Q`: `(m_sc, l_f)`.
    pub fn sector_constants(&self) -> (f64, f64) {
        (self.m_sc, self.l_f)
    }
}

/// A cost known only through a gradient callback, with user-declared
/// sector constants. Used for proximal evaluation of non-quadratic costs.
pub struct GradientOracle<'a> {
    pub grad: &'a dyn Fn(&DVector<f64>) -> DVector<f64>,
    pub m_sc: f64,
    pub l_f: f64,
    pub dim: usize,
}

/// Piecewise-constant disturbance: an ordered list of `(t_switch, w)` pairs,
/// the first at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSchedule {
    entries: Vec<(f64, DVector<f64>)>,
}

impl DisturbanceSchedule {
    pub fn new(entries: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter(
                "disturbance schedule must have at least one entry".into(),
            ));
        }
        if entries[0].0 != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "first disturbance entry must be at t = 0, got t = {}",
                entries[0].0
            )));
        }
        let dim = entries[0].1.len();
        for win in entries.windows(2) {
            if win[1].0 <= win[0].0 {
                return Err(Error::InvalidParameter(
                    "disturbance switch times must be strictly increasing".into(),
                ));
            }
        }
        if entries.iter().any(|(t, w)| !t.is_finite() || w.len() != dim) {
            return Err(Error::InvalidParameter(
                "disturbance entries have inconsistent dimensions".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Constant disturbance `w(t) = w`.
    pub fn constant(w: DVector<f64>) -> Self {
        Self {
            entries: vec![(0.0, w)],
        }
    }

    pub fn dim(&self) -> usize {
        self.entries[0].1.len()
    }

    pub fn entries(&self) -> &[(f64, DVector<f64>)] {
        &self.entries
    }

    /// Value at time `t` (right-continuous: the switch takes effect at
    /// `t = t_switch`).
    pub fn value_at(&self, t: f64) -> &DVector<f64> {
        let mut current = &self.entries[0].1;
        for (ts, w) in &self.entries {
            if *ts <= t {
                current = w;
            } else {
                break;
            }
        }
        current
    }
}
