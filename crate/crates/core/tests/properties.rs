//! Property tests for the structural invariants: transform round trips,
//! semigroup composition, Green's function symmetry and mass, covariance
//! positivity, and the cutoff ramp envelope.

use proptest::prelude::*;

use fch_core::kernel::{fbm_covariance, HurstParams};
use fch_core::solver::cutoff_ramp;
use fch_core::spectral::{green_value, CosineTransform, SpectralField};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip(coeffs in prop::collection::vec(-10.0f64..10.0, 16)) {
        let tf = CosineTransform::new(16, 32).unwrap();
        let field = SpectralField::from_coeffs(coeffs);
        let back = tf.analyze(&tf.synthesize(&field));
        for (a, b) in field.coeffs().iter().zip(back.coeffs().iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn semigroup_composes(
        coeffs in prop::collection::vec(-5.0f64..5.0, 8),
        t1 in 0.0f64..2.0,
        t2 in 0.0f64..2.0,
    ) {
        let f = SpectralField::from_coeffs(coeffs);
        let two_step = f.evolve(t1).unwrap().evolve(t2).unwrap();
        let one_step = f.evolve(t1 + t2).unwrap();
        for (a, b) in two_step.coeffs().iter().zip(one_step.coeffs().iter()) {
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn green_symmetry_mass_and_diagonal(
        x in 0.0f64..std::f64::consts::PI,
        y in 0.0f64..std::f64::consts::PI,
        t in 1e-3f64..3.0,
        modes in 1usize..24,
    ) {
        let g_xy = green_value(x, y, t, modes).unwrap();
        let g_yx = green_value(y, x, t, modes).unwrap();
        prop_assert!((g_xy - g_yx).abs() <= 1e-12);
        prop_assert!(green_value(x, x, t, modes).unwrap() >= 1.0 / std::f64::consts::PI - 1e-15);
        let tf = CosineTransform::new(modes, 2 * modes.max(4)).unwrap();
        let row: Vec<f64> = tf
            .nodes()
            .iter()
            .map(|&z| green_value(x, z, t, modes).unwrap())
            .collect();
        prop_assert!((tf.quadrature(&row) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn covariance_is_symmetric_and_cauchy_schwarz(
        h in 0.51f64..0.99,
        t in 0.0f64..3.0,
        s in 0.0f64..3.0,
    ) {
        let p = HurstParams::new(h).unwrap();
        let r_ts = fbm_covariance(t, s, &p).unwrap();
        let r_st = fbm_covariance(s, t, &p).unwrap();
        prop_assert!((r_ts - r_st).abs() <= 1e-12);
        let bound = (fbm_covariance(t, t, &p).unwrap() * fbm_covariance(s, s, &p).unwrap()).sqrt();
        prop_assert!(r_ts <= bound + 1e-12);
        prop_assert!(r_ts >= 0.0);
    }

    #[test]
    fn cutoff_ramp_envelope(n in 1u32..20, r in 0.0f64..30.0) {
        let (h, dh) = cutoff_ramp(n, r);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!(dh.abs() <= 2.0);
        if r <= n as f64 {
            prop_assert!(h == 1.0);
        }
        if r >= n as f64 + 1.0 {
            prop_assert!(h == 0.0);
        }
    }
}
