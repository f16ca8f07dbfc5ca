//! Acceptance criteria 1 to 10. Each test prints one PASS/FAIL line straight
//! to stdout (bypassing the harness capture) and then asserts.

use std::io::Write;
use std::time::Instant;

use hyk_core::fockcheck::{self, presets};
use hyk_core::hyformula::{self, density_from_kf, SpinDensities};
use hyk_core::lattice;
use hyk_core::parallel::with_workers;
use hyk_core::paulisum::{self, McParams};
use hyk_core::potential::RadialPotential;
use hyk_core::scattering::{self, GridSpec, ScatteringSolution};

fn report(n: u32, passed: bool, detail: String, start: Instant) {
    let line = format!(
        "criterion {n:>2}: {} {detail} ({:.1} s)\n",
        if passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(passed, "criterion {n} failed: {detail}");
}

fn well() -> RadialPotential {
    RadialPotential::square_well(2.0, 1.0).unwrap()
}

fn well_solution() -> ScatteringSolution {
    scattering::solve_zero_energy(&well(), &GridSpec::default()).unwrap()
}

#[test]
fn c01_f_at_one() {
    let t = Instant::now();
    let closed = hyformula::f_at_one();
    let formula = hyformula::f(1.0).unwrap();
    let direct = hyformula::f_direct(1.0).unwrap();
    // 50-digit mpmath evaluation of the closed form
    let reference = 51.390283318691814;
    let worst = [formula, direct, reference].iter().map(|v| (v - closed).abs() / closed).fold(0.0, f64::max);
    report(1, worst <= 1e-12, format!("F(1) = {formula:.15}, max relative gap {worst:.2e}"), t);
}

#[test]
fn c02_reciprocal_symmetry() {
    let t = Instant::now();
    let worst = [0.125, 0.25, 0.5, 2.0, 4.0, 8.0]
        .iter()
        .map(|&x: &f64| {
            let fx = hyformula::f(x).unwrap();
            (fx - x.powf(7.0 / 3.0) * hyformula::f(1.0 / x).unwrap()).abs() / fx
        })
        .fold(0.0, f64::max);
    report(2, worst <= 1e-10, format!("max |F(x) - x^(7/3) F(1/x)| / F(x) = {worst:.2e}"), t);
}

#[test]
fn c03_pauli_integral_closed_form() {
    let t = Instant::now();
    let mc = McParams { samples: 1_000_000, ..McParams::default() };
    let mut ok = true;
    let mut parts = Vec::new();
    for x in [1.0f64, 0.5, 2.0] {
        let k_up = 1.0;
        let k_dn = k_up * x.cbrt();
        let est = paulisum::pauli_blocked_integral(k_up, k_dn, 0.0, &mc).unwrap();
        let r_up = density_from_kf(k_up);
        let exact = r_up.powf(7.0 / 3.0) * hyformula::f(density_from_kf(k_dn) / r_up).unwrap();
        let z = (est.value - exact).abs() / est.std_error;
        let rel = (est.value - exact).abs() / exact;
        ok &= z <= 3.0 && rel <= 0.01;
        parts.push(format!("x={x}: z={z:.2} rel={rel:.1e}"));
    }
    report(3, ok, parts.join(", "), t);
}

#[test]
fn c04_scattering_oracle() {
    let t = Instant::now();
    let sol = well_solution();
    let exact = 1.0 - 1f64.tanh();
    let da = (sol.a - exact).abs();
    let res = scattering::residuals(&sol);
    let ok = da <= 1e-8 && res.eight_pi_a <= 1e-8 && res.energy_identity <= 1e-6;
    report(
        4,
        ok,
        format!("|a - (1 - tanh 1)| = {da:.1e}, 8 pi a identity {:.1e}, energy identity {:.1e}", res.eight_pi_a, res.energy_identity),
        t,
    );
}

#[test]
fn c05_correlation_constant_bound() {
    let t = Instant::now();
    let sol = well_solution();
    let mc = McParams { samples: 16_384, ..McParams::default() };
    let mut pts = Vec::new();
    let mut bound_ok = true;
    let mut margin = f64::INFINITY;
    for rho in [1e-5, 2e-5, 5e-5, 1e-4] {
        let d = SpinDensities::symmetric(rho).unwrap();
        let eps = d.total().powf(2.0 / 3.0 + 1.0);
        let c = paulisum::corr_constant(&sol, &d, eps, &mc).unwrap();
        // value >= bound - 3 sigma
        margin = margin.min(c.deficit / c.std_error);
        bound_ok &= c.deficit >= -3.0 * c.std_error;
        pts.push((rho, c.deficit.abs()));
    }
    let fit = lattice::ScalingFit::new(pts).unwrap();
    let ok = bound_ok && fit.slope >= 2.38;
    report(5, ok, format!("deficit slope {:.3} (need >= 2.38), smallest (value - bound) / sigma = {margin:.1}", fit.slope), t);
}

#[test]
fn c06_lattice_to_continuum() {
    let t = Instant::now();
    let d = SpinDensities::new(5e-3, 5e-3).unwrap();
    let kf = d.kf_up();
    let pts: Vec<(f64, f64)> = [100.0, 150.0, 200.0, 300.0, 400.0]
        .iter()
        .map(|kl| {
            let l = kl / kf;
            (l, lattice::ffg_energy(&lattice::build(l, &d, kf).unwrap(), 0.0).kinetic_per_volume)
        })
        .collect();
    let fit = lattice::extrapolate(&pts).unwrap();
    let exact = lattice::continuum_kinetic(&d);
    let ffg_rel = (fit.limit - exact).abs() / exact;

    let d = SpinDensities::new(1e-2, 1e-2).unwrap();
    let sol = well_solution();
    let l = 40.0 / d.kf_up();
    let eps = d.total().powf(5.0 / 3.0);
    let lat = lattice::build(l, &d, d.kf_up()).unwrap();
    let per = scattering::periodize(&sol, l, d.total(), 0.1, 16.0).unwrap();
    let cs = lattice::correction_lattice_sum(&lat, &per, eps).unwrap();
    let dl = SpinDensities::new(lat.lattice_density(0), lat.lattice_density(1)).unwrap();
    let (cont, _) = paulisum::blocked_second_order(&sol, &dl, eps, &McParams { samples: 20_000, ..McParams::default() }).unwrap();
    let sum_rel = (cs.per_volume - cont).abs() / cont.abs();
    report(
        6,
        ffg_rel <= 5e-3 && sum_rel <= 0.02,
        format!("FFG extrapolation off by {ffg_rel:.1e} (need 5e-3), correction sum vs continuum {sum_rel:.1e} (need 2e-2)"),
        t,
    );
}

#[test]
fn c07_t_integral_scalings() {
    let t = Instant::now();
    let d = SpinDensities::symmetric(1e-4).unwrap();
    let suite = lattice::t_integral_suite(&d, 0.1, 1.0, 40.0 / d.kf_up()).unwrap();
    let worst = suite.iter().map(|f| (f.fit.slope - f.expected_exponent).abs()).fold(0.0, f64::max);
    let slopes: Vec<String> = suite.iter().map(|f| format!("{} {:.3}/{:.3}", f.label, f.fit.slope, f.expected_exponent)).collect();
    report(7, suite.len() == 5 && worst <= 0.05, format!("max exponent gap {worst:.3}; {}", slopes.join(", ")), t);
}

#[test]
fn c08_heat_kernel() {
    let t = Instant::now();
    let rho = 1e-4;
    let gamma = 0.1;
    let l = 40.0 / SpinDensities::symmetric(rho).unwrap().kf_up();
    let p = 3.0 * rho.powf(1.0 / 3.0 - gamma);
    let fit = lattice::heat_kernel_scaling(l, rho, gamma, 1e-3 / (p * p)).unwrap();
    let worst = fit
        .points
        .iter()
        .map(|(tt, _)| {
            let h = lattice::heat_kernel_norms(*tt, l, rho, gamma).unwrap();
            (h.l1_norm - 1.0).abs().max((h.l1_norm_quadrature - 1.0).abs())
        })
        .fold(0.0, f64::max);
    report(8, worst <= 1e-10 && fit.slope <= -0.70, format!("max |l1 - 1| = {worst:.1e}, rescaled l2 slope {:.3}", fit.slope), t);
}

#[test]
fn c09_fock_identity_suite() {
    let t = Instant::now();
    let pot = well();
    let main = presets::prop34_tiny(&pot).unwrap();
    let rr = presets::rr_tiny(&pot).unwrap();
    let fock = &main.fock;
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    let car = fockcheck::car_residual(fock).unwrap();
    check("car", car <= 1e-13);
    let ph = fockcheck::particle_hole_report(fock, &fockcheck::particle_hole(fock).unwrap()).unwrap();
    let ph_worst = ph.vacuum_residual.max(ph.unitarity_residual).max(ph.conjugation_residual);
    check("particle-hole", ph_worst <= 1e-12);
    let vs = fockcheck::verify_vphi_square_identity(fock, &main.kernels).unwrap();
    check("pre-cancellation", vs.global_residual <= 1e-10);
    let mut tt = 0.0f64;
    for tuple in &fockcheck::sample_tuples(fock, 20, 0x5eed).unwrap() {
        tt = tt.max(fockcheck::verify_tt_anticommutator(fock, tuple).unwrap());
    }
    check("tt", tt <= 1e-12);
    let rep = fockcheck::verify_rr_decomposition(&rr.fock, &rr.kernels.phi, 0.3).unwrap();
    check("rr", rep.residual <= 1e-9);
    for (j, (lo, hi)) in rep.extremes.iter().enumerate() {
        match j + 1 {
            4..=8 => check("rr sign", *lo >= -1e-10),
            9 | 10 => check("rr sign", *hi <= 1e-10),
            _ => {}
        }
    }
    let conj = fockcheck::conjugation_lower_bound_check(fock, &main.kernels.v, 100, 0x5eed).unwrap();
    check("conjugation", conj.min_gap >= -1e-10);

    let detail = format!(
        "car {car:.1e}, particle-hole {ph_worst:.1e}, pre-cancellation {:.1e}, tt {tt:.1e}, rr {:.1e}, conjugation gap {:.1e}{}",
        vs.global_residual,
        rep.residual,
        conj.min_gap,
        if fails.is_empty() { String::new() } else { format!("; failing: {}", fails.join(", ")) }
    );
    report(9, fails.is_empty(), detail, t);
}

#[test]
fn c10_determinism() {
    let t = Instant::now();
    let sol = well_solution();
    let d = SpinDensities::symmetric(1e-3).unwrap();
    let eps = d.total().powf(5.0 / 3.0);
    let mc = McParams { samples: 20_000, seed: 7, ..McParams::default() };
    let l = 40.0 / d.kf_up();
    let run = || -> Vec<u64> {
        let pb = paulisum::pauli_blocked_integral(1.0, 0.8, 0.0, &mc).unwrap();
        let cc = paulisum::corr_constant(&sol, &d, eps, &McParams { samples: 4_096, ..mc.clone() }).unwrap();
        let lat = lattice::build(l, &d, d.kf_up()).unwrap();
        let per = scattering::periodize(&sol, l, d.total(), 0.1, 8.0).unwrap();
        let cs = lattice::correction_lattice_sum(&lat, &per, eps).unwrap();
        let hk = lattice::heat_kernel_norms(0.5, l, d.total(), 0.1).unwrap();
        [pb.value, pb.std_error, cc.value, cc.std_error, cs.per_volume, hk.l2_norm_outer].iter().map(|x| x.to_bits()).collect()
    };
    let reference = with_workers(1, run).unwrap();
    let same = [4, 8].iter().all(|&w| with_workers(w, run).unwrap() == reference);
    report(10, same, format!("{} results bit-identical across 1, 4 and 8 workers: {same}", reference.len()), t);
}
