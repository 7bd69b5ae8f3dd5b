//! Property-based invariants over randomized costs, sectors, and configs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use optfb::cli::config::ExperimentConfig;
use optfb::iqc::{affine_compose, gradient_iqc, phi1_iqc, phi2_iqc, prox_iqc};
use optfb::model::QuadraticCost;

fn random_spd_cost(rng: &mut ChaCha8Rng, n: usize) -> QuadraticCost {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    QuadraticCost::new(q, c, 0.0).unwrap()
}

/// The sector constants really bound the gradient variation:
/// `m‖δ‖² ≤ δᵀ(∇f(p)−∇f(p'))` and `‖∇f(p)−∇f(p')‖ ≤ L‖δ‖`,
/// checked on 10⁴ seeded samples.
#[test]
fn sector_inequalities_hold_on_10k_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..100 {
        let n = 1 + (trial % 4);
        let cost = random_spd_cost(&mut rng, n);
        let (m, l) = cost.sector_constants();
        for _ in 0..100 {
            let p = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 10.0);
            let p2 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 10.0);
            let delta = &p - &p2;
            let dg = cost.gradient(&p) - cost.gradient(&p2);
            let ns = delta.norm_squared();
            assert!(delta.dot(&dg) >= m * ns - 1e-9 * (1.0 + ns));
            assert!(dg.norm() <= l * delta.norm() * (1.0 + 1e-12) + 1e-12);
        }
    }
}

proptest! {
    /// Every constructed multiplier is exactly symmetric.
    #[test]
    fn iqc_matrices_are_symmetric(
        m in 0.01f64..5.0,
        spread in 0.0f64..5.0,
        rho in 0.01f64..20.0,
        n in 1usize..4,
    ) {
        let l = m + spread;
        for iqc in [
            gradient_iqc(m, l, n).unwrap(),
            phi1_iqc(m, l, n).unwrap(),
            prox_iqc(m, l, rho, n).unwrap(),
            phi2_iqc(m, l, rho, n).unwrap(),
        ] {
            prop_assert!((&iqc.qmat - iqc.qmat.transpose()).amax() == 0.0);
        }
    }

    /// Composing with (I, I, 0) is the identity on multipliers.
    #[test]
    fn identity_composition_is_identity(
        m in 0.01f64..5.0,
        spread in 0.0f64..5.0,
        n in 1usize..4,
    ) {
        let l = m + spread;
        let base = gradient_iqc(m, l, n).unwrap();
        let eye = DMatrix::identity(n, n);
        let composed = affine_compose(&base, &eye, &eye, &DMatrix::zeros(n, n)).unwrap();
        prop_assert!((&composed.qmat - &base.qmat).amax() <= 1e-13 * (1.0 + base.qmat.amax()));
    }

    /// Two successive negations cancel.
    #[test]
    fn double_negation_composition_cancels(
        m in 0.01f64..5.0,
        spread in 0.0f64..5.0,
        n in 1usize..4,
    ) {
        let l = m + spread;
        let base = gradient_iqc(m, l, n).unwrap();
        let eye = DMatrix::identity(n, n);
        let neg = affine_compose(&base, &eye, &(-&eye), &DMatrix::zeros(n, n)).unwrap();
        let back = affine_compose(&neg, &eye, &(-&eye), &DMatrix::zeros(n, n)).unwrap();
        prop_assert!((&back.qmat - &base.qmat).amax() <= 1e-12 * (1.0 + base.qmat.amax()));
    }

    /// Config serialization round-trips field-by-field.
    #[test]
    fn config_round_trip(
        a in -5.0f64..5.0,
        b in 0.1f64..5.0,
        q in 0.1f64..10.0,
        ki in -3.0f64..3.0,
        kp in -3.0f64..3.0,
        rho in 0.1f64..10.0,
        dt in 1e-4f64..1e-2,
        use_phi2 in any::<bool>(),
        with_sim in any::<bool>(),
    ) {
        let mut text = format!(
            "[plant]\na = [[{a}]]\nb = [[{b}]]\nc = [[1.0]]\n\n\
             [cost]\nq = [[{q}]]\nc = [0.0]\n\n\
             [controller]\nk_i = [[{ki}]]\nk_p = [[{kp}]]\n\
             optimizer = \"{}\"\nrho = {rho}\nestimator = \"bypass\"\n",
            if use_phi2 { "phi2" } else { "phi1" },
        );
        if with_sim {
            text.push_str(&format!(
                "\n[simulation]\ndt = {dt}\nt_final = 1.0\nxi0 = [0.0, 0.0]\n\
                 disturbance = [{{ t = 0.0, w = [1.0] }}]\n"
            ));
        }
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let serialized = cfg.to_toml().unwrap();
        let again = ExperimentConfig::parse(&serialized).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
