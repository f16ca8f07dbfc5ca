use hyk_core::fockcheck::{self, presets};
use hyk_core::hyformula::{self, SpinDensities};
use hyk_core::lattice::{self, norm2, Mode};
use hyk_core::paulisum::{self, McParams};
use hyk_core::potential::RadialPotential;
use hyk_core::scattering::{self, GridSpec};
use proptest::prelude::*;

fn small_mc(seed: u64) -> McParams {
    McParams { samples: 512, seed, shells: 4, ..McParams::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_reciprocal_symmetry(lx in -6.0f64..6.0) {
        let x = lx.exp();
        let fx = hyformula::f(x).unwrap();
        let mirrored = x.powf(7.0 / 3.0) * hyformula::f(1.0 / x).unwrap();
        prop_assert!((fx - mirrored).abs() <= 1e-10 * fx);
    }

    #[test]
    fn f_is_positive_and_increasing(lx in -6.0f64..6.0, step in 0.01f64..1.0) {
        let x = lx.exp();
        let a = hyformula::f(x).unwrap();
        let b = hyformula::f(x * (1.0 + step)).unwrap();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn energy_is_symmetric_in_spin(ru in 1e-6f64..1e-2, rd in 1e-6f64..1e-2, a in 0.01f64..2.0) {
        let e1 = hyformula::huang_yang_energy(&SpinDensities::new(ru, rd).unwrap(), a).unwrap();
        let e2 = hyformula::huang_yang_energy(&SpinDensities::new(rd, ru).unwrap(), a).unwrap();
        prop_assert!((e1.total - e2.total).abs() <= 1e-12 * e1.total.abs());
    }

    #[test]
    fn ball_enumeration_matches_brute_force(m in 0i64..60) {
        let r = 8i64;
        let mut brute = 0usize;
        for x in -r..=r {
            for y in -r..=r {
                for z in -r..=r {
                    if x * x + y * y + z * z <= m {
                        brute += 1;
                    }
                }
            }
        }
        let ball = lattice::enumerate_ball(m);
        prop_assert_eq!(ball.len(), brute);
        let counts = lattice::shell_counts(m as usize);
        prop_assert_eq!(counts.iter().sum::<u64>() as usize, brute);
        prop_assert!(ball.windows(2).all(|w| (norm2(w[0]), w[0]) < (norm2(w[1]), w[1])));
    }

    #[test]
    fn ball_indicators_are_complementary(kl in 2.0f64..12.0, x in -6i64..6, y in -6i64..6, z in -6i64..6) {
        let d = SpinDensities::symmetric(1e-3).unwrap();
        let l = kl / d.kf_up();
        let lat = lattice::build(l, &d, d.kf_up()).unwrap();
        let n: Mode = [x, y, z];
        for s in 0..2 {
            prop_assert_eq!(lat.u_hat(s, n) * lat.v_hat(s, n), 0.0);
            prop_assert_eq!(lat.u_hat(s, n) + lat.v_hat(s, n), 1.0);
        }
    }

    #[test]
    fn scattering_length_scales_with_range(r in 0.2f64..5.0) {
        let base = scattering::solve_zero_energy(&RadialPotential::square_well(2.0, 1.0).unwrap(), &GridSpec::default()).unwrap();
        let scaled = scattering::solve_zero_energy(&RadialPotential::square_well(2.0 / (r * r), r).unwrap(), &GridSpec::default()).unwrap();
        prop_assert!((scaled.a - r * base.a).abs() <= 1e-9 * r * base.a);
    }

    #[test]
    fn scattering_length_grows_with_strength(v0 in 0.1f64..20.0, factor in 1.05f64..3.0) {
        let a = |v: f64| scattering::solve_zero_energy(&RadialPotential::square_well(v, 1.0).unwrap(), &GridSpec::default()).unwrap().a;
        let (lo, hi) = (a(v0), a(v0 * factor));
        prop_assert!(lo > 0.0 && hi > lo && hi < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pauli_integral_scales_as_seventh_power(k1 in 0.3f64..2.0, k2 in 0.3f64..2.0, lam in 0.2f64..5.0, seed in any::<u64>()) {
        let eps = 0.1;
        let mc = small_mc(seed);
        let g = paulisum::pauli_blocked_integral(k1, k2, eps, &mc).unwrap();
        let gl = paulisum::pauli_blocked_integral(lam * k1, lam * k2, lam * lam * eps, &mc).unwrap();
        prop_assert!((gl.value - lam.powi(7) * g.value).abs() <= 1e-9 * gl.value.abs());
    }

    #[test]
    fn pauli_integral_grows_with_eps(k1 in 0.3f64..2.0, k2 in 0.3f64..2.0, e1 in 0.0f64..0.5, de in 0.01f64..0.5, seed in any::<u64>()) {
        let mc = small_mc(seed);
        let lo = paulisum::pauli_blocked_integral(k1, k2, e1, &mc).unwrap();
        let hi = paulisum::pauli_blocked_integral(k1, k2, e1 + de, &mc).unwrap();
        prop_assert!(hi.value > lo.value);
    }

    #[test]
    fn correction_sum_falls_with_eps(e1 in 1e-4f64..1e-2, factor in 1.5f64..10.0) {
        let sol = scattering::solve_zero_energy(&RadialPotential::square_well(2.0, 1.0).unwrap(), &GridSpec::default()).unwrap();
        let d = SpinDensities::symmetric(1e-2).unwrap();
        let l = 10.0 / d.kf_up();
        let lat = lattice::build(l, &d, d.kf_up()).unwrap();
        let per = scattering::periodize(&sol, l, d.total(), 0.1, 4.0).unwrap();
        let lo = lattice::correction_lattice_sum(&lat, &per, e1).unwrap();
        let hi = lattice::correction_lattice_sum(&lat, &per, e1 * factor).unwrap();
        prop_assert!(hi.per_volume < lo.per_volume);
    }

    #[test]
    fn fock_identities_on_random_mode_sets(picks in proptest::collection::vec((0usize..2, -1i64..=1, -1i64..=1), 1..6), seed in any::<u64>()) {
        let pot = RadialPotential::square_well(2.0, 1.0).unwrap();
        let mut up: Vec<Mode> = vec![[0, 0, 0]];
        let mut down: Vec<Mode> = vec![[0, 0, 0]];
        for (s, x, y) in picks {
            let k = [x, y, 0];
            let list = if s == 0 { &mut up } else { &mut down };
            if !list.contains(&k) {
                list.push(k);
            }
        }
        let t = presets::custom(&pot, &up, &down).unwrap();
        prop_assert!(fockcheck::car_residual(&t.fock).unwrap() <= 1e-13);
        let ph = fockcheck::particle_hole_report(&t.fock, &fockcheck::particle_hole(&t.fock).unwrap()).unwrap();
        prop_assert!(ph.vacuum_residual.max(ph.unitarity_residual).max(ph.conjugation_residual) <= 1e-12);
        prop_assert!(fockcheck::relation_check_random(&t.fock, 5, seed).unwrap() <= 1e-12);
        let c = fockcheck::conjugation_lower_bound_check(&t.fock, &t.kernels.v, 10, seed).unwrap();
        prop_assert!(c.min_gap >= -1e-10);
    }
}
