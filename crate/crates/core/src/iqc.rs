//! Pointwise IQC construction and composition.
//!
//! An IQC here is a symmetric `2n×2n` matrix `Q` such that
//! `[p-p*; φ(p)-φ(p*)]ᵀ Q [p-p*; φ(p)-φ(p*)] ≥ 0` for all `p`, anchored at
//! a reference pair `(p*, φ(p*))`. The constructors cover the gradient of a
//! strongly convex function, the proximal map, and the two optimizer blocks
//! built from them; `affine_compose` implements the congruence rule for
//! `ψ(p) = S₂p + S₁φ(S₀p)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::lstsq;

/// A pointwise IQC: the multiplier matrix plus the reference pair it is
/// anchored to. Only the matrix enters the stability LMI; the reference
/// documents the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseIqc {
    pub qmat: DMatrix<f64>,
    pub dim: usize,
    pub ref_in: DVector<f64>,
    pub ref_out: DVector<f64>,
}

impl PointwiseIqc {
    fn from_qmat(qmat: DMatrix<f64>, dim: usize) -> Self {
        // exact symmetry by construction
        let qmat = (&qmat + qmat.transpose()) * 0.5;
        Self {
            qmat,
            dim,
            ref_in: DVector::zeros(dim),
            ref_out: DVector::zeros(dim),
        }
    }

    pub fn with_reference(mut self, ref_in: DVector<f64>, ref_out: DVector<f64>) -> Self {
        self.ref_in = ref_in;
        self.ref_out = ref_out;
        self
    }
}

fn kron_with_identity(block: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    block.kronecker(&DMatrix::identity(n, n))
}

fn check_sector(m_sc: f64, l_f: f64) -> Result<()> {
    if !(m_sc > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "strong-convexity constant must be positive, got {m_sc}"
        )));
    }
    if l_f < m_sc {
        return Err(Error::InvalidParameter(format!(
            "Lipschitz constant {l_f} smaller than strong-convexity constant {m_sc}"
        )));
    }
    Ok(())
}

/// IQC of the gradient of an `m_sc`-strongly-convex function with
/// `l_f`-Lipschitz gradient:
/// `Q_f = [[-2mL, L+m], [L+m, -2]] ⊗ I_n`.
pub fn gradient_iqc(m_sc: f64, l_f: f64, n: usize) -> Result<PointwiseIqc> {
    check_sector(m_sc, l_f)?;
    let block = DMatrix::from_row_slice(
        2,
        2,
        &[-2.0 * m_sc * l_f, l_f + m_sc, l_f + m_sc, -2.0],
    );
    Ok(PointwiseIqc::from_qmat(kron_with_identity(&block, n), n))
}

/// IQC of the composed map `ψ(p) = S₂p + S₁φ(S₀p)` given the IQC of `φ`.
pub fn affine_compose(
    base: &PointwiseIqc,
    s0: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
) -> Result<PointwiseIqc> {
    let n = base.dim;
    for (name, s) in [("S0", s0), ("S1", s1), ("S2", s2)] {
        if s.nrows() != n || s.ncols() != n {
            return Err(Error::Dimension(format!(
                "{name} must be {n}x{n}, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    let svd = s1.clone().svd(false, false);
    let smin = svd.singular_values.min();
    let smax = svd.singular_values.max();
    if smin <= 0.0 || smax / smin > 1e12 {
        return Err(Error::Singular(format!(
            "S1 is singular or ill-conditioned (cond {:.3e})",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let s1_inv = s1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("S1 has no inverse".into()))?;
    let s1is2 = &s1_inv * s2;

    // right factor [[S0, 0], [-S1⁻¹S2, S1⁻¹]]; the left factor is its transpose
    let mut right = DMatrix::zeros(2 * n, 2 * n);
    right.view_mut((0, 0), (n, n)).copy_from(s0);
    right.view_mut((n, 0), (n, n)).copy_from(&(-&s1is2));
    right.view_mut((n, n), (n, n)).copy_from(&s1_inv);
    let qpsi = right.transpose() * &base.qmat * &right;

    // Anchor the composed map at p̃ with S₀p̃ = ref_in, so the stored
    // base.ref_out = φ(S₀p̃) is usable; falls back to the minimum-norm solve
    // when S₀ is singular.
    let ref_in = lstsq(s0, &base.ref_in);
    let ref_out = s2 * &ref_in + s1 * &base.ref_out;
    Ok(PointwiseIqc::from_qmat(qpsi, n).with_reference(ref_in, ref_out))
}

/// IQC of the proximal map `Π_{ρf}`:
/// `([[0, ρ⁻¹], [1, -ρ⁻¹]] ⊗ I) Q_f ([[0, 1], [ρ⁻¹, -ρ⁻¹]] ⊗ I)`.
pub fn prox_iqc(m_sc: f64, l_f: f64, rho: f64, n: usize) -> Result<PointwiseIqc> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "proximal parameter rho must be positive, got {rho}"
        )));
    }
    let qf = gradient_iqc(m_sc, l_f, n)?;
    let ri = 1.0 / rho;
    let left = kron_with_identity(&DMatrix::from_row_slice(2, 2, &[0.0, ri, 1.0, -ri]), n);
    let right = kron_with_identity(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, ri, -ri]), n);
    Ok(PointwiseIqc::from_qmat(&left * &qf.qmat * &right, n))
}

/// IQC of the gradient-descent optimizer `φ₁ = -∇f`.
pub fn phi1_iqc(m_sc: f64, l_f: f64, n: usize) -> Result<PointwiseIqc> {
    let qf = gradient_iqc(m_sc, l_f, n)?;
    let flip = kron_with_identity(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), n);
    Ok(PointwiseIqc::from_qmat(&flip * &qf.qmat * &flip, n))
}

/// IQC of the proximal-tracking optimizer `φ₂ = Π_{ρf} - I`.
pub fn phi2_iqc(m_sc: f64, l_f: f64, rho: f64, n: usize) -> Result<PointwiseIqc> {
    let qprox = prox_iqc(m_sc, l_f, rho, n)?;
    let left = kron_with_identity(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), n);
    let right = kron_with_identity(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]), n);
    Ok(PointwiseIqc::from_qmat(&left * &qprox.qmat * &right, n))
}

/// Result of a sampling spot-check of an IQC.
#[derive(Debug, Clone)]
pub struct IqcSampleReport {
    /// Smallest raw quadratic-form value seen.
    pub min_raw: f64,
    /// Smallest value normalized by its per-sample scale.
    pub min_value: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Spot-checks `[p-p*; φ(p)-φ(p*)]ᵀ Q [·] ≥ 0` on seeded Gaussian draws
/// around `ref_in`, cycling through radii `{1e-2, 1, 1e2}`.
///
/// Each sample passes iff its value is at least `-1e-8` times its scale
/// `‖v‖²(1 + ‖Q‖_max)`; `min_value` is the smallest normalized value.
pub fn sample_verify_iqc<F>(
    iqc: &PointwiseIqc,
    phi: F,
    ref_in: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> IqcSampleReport
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    const RADII: [f64; 3] = [1e-2, 1.0, 1e2];
    let n = iqc.dim;
    let ref_out = phi(ref_in);
    let qnorm = iqc.qmat.amax();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut min_raw = f64::INFINITY;
    let mut min_value = f64::INFINITY;
    let mut pass = true;
    for i in 0..samples {
        let radius = RADII[i % RADII.len()];
        let g = DVector::from_fn(n, |_, _| {
            let x: f64 = normal.sample(&mut rng);
            x
        });
        let p = ref_in + g * radius;
        let out = phi(&p);
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&(&p - ref_in));
        v.rows_mut(n, n).copy_from(&(&out - &ref_out));
        let value = v.dot(&(&iqc.qmat * &v));
        let scale = v.norm_squared() * (1.0 + qnorm);
        let normalized = if scale > 0.0 { value / scale } else { 0.0 };
        if value < -1e-8 * scale {
            pass = false;
        }
        min_raw = min_raw.min(value);
        min_value = min_value.min(normalized);
    }
    if samples == 0 {
        min_raw = 0.0;
        min_value = 0.0;
    }
    IqcSampleReport {
        min_raw,
        min_value,
        pass,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{phi1_eval, phi2_eval};
    use crate::model::QuadraticCost;
    use approx::assert_relative_eq;

    fn assert_mat_eq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        assert!(
            (a - b).amax() <= tol,
            "matrices differ by {:.3e}:\n{a}\n{b}",
            (a - b).amax()
        );
    }

    #[test]
    fn gradient_iqc_values() {
        let q = gradient_iqc(1.0, 1.0, 1).unwrap();
        assert_mat_eq(
            &q.qmat,
            &DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 2.0, -2.0]),
            0.0,
        );

        let q = gradient_iqc(3.0, 3.0, 1).unwrap();
        assert_mat_eq(
            &q.qmat,
            &DMatrix::from_row_slice(2, 2, &[-18.0, 6.0, 6.0, -2.0]),
            0.0,
        );

        let q = gradient_iqc(1.0, 2.0, 2).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-4.0, 3.0, 3.0, -2.0])
            .kronecker(&DMatrix::identity(2, 2));
        assert_mat_eq(&q.qmat, &expected, 0.0);
    }

    #[test]
    fn gradient_iqc_rejects_bad_constants() {
        assert!(gradient_iqc(0.0, 1.0, 1).is_err());
        assert!(gradient_iqc(-1.0, 1.0, 1).is_err());
        assert!(gradient_iqc(2.0, 1.0, 1).is_err());
    }

    #[test]
    fn affine_identity_composition() {
        let base = gradient_iqc(0.5, 2.0, 2).unwrap();
        let eye = DMatrix::identity(2, 2);
        let zero = DMatrix::zeros(2, 2);
        let composed = affine_compose(&base, &eye, &eye, &zero).unwrap();
        assert_mat_eq(&composed.qmat, &base.qmat, 1e-14);
    }

    #[test]
    fn affine_compose_rejects_singular_s1() {
        let base = gradient_iqc(1.0, 1.0, 2).unwrap();
        let eye = DMatrix::identity(2, 2);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(affine_compose(&base, &eye, &sing, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn phi1_matches_affine_construction() {
        for (m, l, n) in [(1.0, 1.0, 1usize), (0.5, 2.0, 2), (3.0, 3.0, 3)] {
            let direct = phi1_iqc(m, l, n).unwrap();
            let base = gradient_iqc(m, l, n).unwrap();
            let eye = DMatrix::identity(n, n);
            let via = affine_compose(&base, &eye, &(-&eye), &DMatrix::zeros(n, n)).unwrap();
            assert_mat_eq(&direct.qmat, &via.qmat, 1e-12);
        }
        let q = phi1_iqc(1.0, 1.0, 1).unwrap();
        assert_mat_eq(
            &q.qmat,
            &DMatrix::from_row_slice(2, 2, &[-2.0, -2.0, -2.0, -2.0]),
            0.0,
        );
    }

    #[test]
    fn prox_iqc_scalar_value() {
        // m = L = ρ = 1: hand multiplication of the three 2x2 factors
        // [[0,1],[1,-1]]·[[-2,2],[2,-2]]·[[0,1],[1,-1]] = [[-2,4],[4,-8]]
        let q = prox_iqc(1.0, 1.0, 1.0, 1).unwrap();
        assert_mat_eq(
            &q.qmat,
            &DMatrix::from_row_slice(2, 2, &[-2.0, 4.0, 4.0, -8.0]),
            1e-14,
        );
    }

    #[test]
    fn prox_iqc_symmetry_and_block_structure() {
        let q = prox_iqc(0.3, 1.7, 0.7, 3).unwrap();
        assert_mat_eq(&q.qmat, &q.qmat.transpose(), 1e-12);

        // n = 2 equals the scalar construction Kronecker I₂
        let q1 = prox_iqc(0.3, 1.7, 0.7, 1).unwrap();
        let q2 = prox_iqc(0.3, 1.7, 0.7, 2).unwrap();
        assert_mat_eq(&q2.qmat, &q1.qmat.kronecker(&DMatrix::identity(2, 2)), 1e-13);
    }

    #[test]
    fn prox_iqc_rejects_nonpositive_rho() {
        assert!(prox_iqc(1.0, 1.0, 0.0, 1).is_err());
        assert!(prox_iqc(1.0, 1.0, -2.0, 1).is_err());
    }

    #[test]
    fn phi2_matches_affine_construction() {
        for (m, l, rho, n) in [(1.0, 1.0, 1.0, 1usize), (0.5, 2.0, 0.7, 2)] {
            let direct = phi2_iqc(m, l, rho, n).unwrap();
            let base = prox_iqc(m, l, rho, n).unwrap();
            let eye = DMatrix::identity(n, n);
            let via = affine_compose(&base, &eye, &eye, &(-&eye)).unwrap();
            assert_mat_eq(&direct.qmat, &via.qmat, 1e-12);
        }
        // hand multiplication from the prox example: [[-2,-4],[-4,-8]]
        let q = phi2_iqc(1.0, 1.0, 1.0, 1).unwrap();
        assert_mat_eq(
            &q.qmat,
            &DMatrix::from_row_slice(2, 2, &[-2.0, -4.0, -4.0, -8.0]),
            1e-14,
        );
    }

    #[test]
    fn sampling_gradient_iqc_passes() {
        let cost = QuadraticCost::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DVector::from_row_slice(&[1.0, -2.0]),
            0.0,
        )
        .unwrap();
        let (m, l) = cost.sector_constants();
        let iqc = gradient_iqc(m, l, 2).unwrap();
        let xs = cost.minimizer().unwrap();
        let report = sample_verify_iqc(&iqc, |p| cost.gradient(p), &xs, 2000, 7);
        assert!(report.pass, "min normalized value {}", report.min_value);
    }

    #[test]
    fn sampling_phi1_and_phi2_pass() {
        // f = (x-10)^2
        let cost = QuadraticCost::new(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::from_row_slice(&[-20.0]),
            0.0,
        )
        .unwrap();
        let xs = cost.minimizer().unwrap();
        let iqc = phi1_iqc(2.0, 2.0, 1).unwrap();
        let report = sample_verify_iqc(&iqc, |p| phi1_eval(&cost, p), &xs, 1000, 3);
        assert!(report.pass);

        let iqc = phi2_iqc(2.0, 2.0, 0.8, 1).unwrap();
        let report =
            sample_verify_iqc(&iqc, |p| phi2_eval(&cost, 0.8, p).unwrap(), &xs, 1000, 3);
        assert!(report.pass);
    }

    #[test]
    fn sampling_detects_invalid_iqc() {
        let bad = PointwiseIqc::from_qmat(-DMatrix::<f64>::identity(2, 2), 1);
        let report = sample_verify_iqc(&bad, |p| p.clone(), &DVector::zeros(1), 100, 1);
        assert!(!report.pass);
        assert!(report.min_value < 0.0);
    }

    #[test]
    fn sampling_at_reference_is_zero() {
        let iqc = gradient_iqc(1.0, 2.0, 1).unwrap();
        // φ maps everything to the reference output: p - p* = 0 whenever the
        // sampled radius is zero is not reachable here, so instead check the
        // degenerate zero-sample case and a constant map at the reference.
        let report = sample_verify_iqc(&iqc, |_| DVector::zeros(1), &DVector::zeros(1), 0, 1);
        assert_eq!(report.min_value, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn reference_pair_transforms() {
        let base = gradient_iqc(1.0, 2.0, 2)
            .unwrap()
            .with_reference(
                DVector::from_row_slice(&[1.0, 2.0]),
                DVector::from_row_slice(&[3.0, 4.0]),
            );
        let eye = DMatrix::identity(2, 2);
        let composed = affine_compose(&base, &eye, &(-&eye), &DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(composed.ref_in[0], 1.0);
        assert_relative_eq!(composed.ref_out[0], -3.0);
    }
}
