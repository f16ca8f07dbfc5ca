//! Subcommand configurations and their execution.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use hyk_core::fockcheck::{self, presets, FockSpace, OperatorHandle, TorusFunction};
use hyk_core::hyformula::{self, density_from_kf, SpinDensities};
use hyk_core::lattice::{self, Mode};
use hyk_core::paulisum::{self, AngularRule, McParams};
use hyk_core::potential::{soft_sphere_ladder, RadialPotential};
use hyk_core::scattering::{self, GridSpec};

use crate::config::{hash_seed, overlay, parse_list};
use crate::output::{Check, Outcome, Table};

/// Defaults for (gamma, delta).
pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 1.0;

fn potential(kind: &str, params: &str) -> Result<RadialPotential> {
    let nums = || parse_list(params);
    Ok(match kind {
        "square" => {
            let p = nums()?;
            if p.len() != 2 {
                bail!("square well takes V0,R");
            }
            RadialPotential::square_well(p[0], p[1])?
        }
        "gaussian" => {
            let p = nums()?;
            if p.len() != 3 {
                bail!("truncated gaussian takes V0,sigma,cutoff");
            }
            RadialPotential::truncated_gaussian(p[0], p[1], p[2])?
        }
        "table" => RadialPotential::from_table_file(Path::new(params))?,
        _ => bail!("unknown potential {kind:?}; expected square, gaussian, table or soft-sphere"),
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0 / 6.0) {
        bail!("gamma must lie in (0, 1/6), got {gamma}");
    }
    Ok(())
}

fn positive(name: &str, x: f64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        bail!("{name} must be positive, got {x}");
    }
    Ok(())
}

fn solve(kind: &str, params: &str) -> Result<scattering::ScatteringSolution> {
    Ok(scattering::solve_zero_energy(&potential(kind, params)?, &GridSpec::default())?)
}

// ---------------------------------------------------------------- scatter

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterArgs {
    /// square, gaussian, table or soft-sphere
    #[arg(long)]
    pub potential: Option<String>,
    /// V0,R | V0,sigma,cutoff | table path | range,v_max,rungs
    #[arg(long)]
    pub params: Option<String>,
    /// Outer radius of the grid
    #[arg(long)]
    pub rmax: Option<f64>,
    /// Grid intervals inside the support
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Grid intervals outside the support
    #[arg(long)]
    pub nodes_outside: Option<usize>,
    /// Tolerance for the 8 pi a and exterior-law checks
    #[arg(long)]
    pub tol: Option<f64>,
}

impl ScatterArgs {
    fn resolve(mut self) -> Result<Self> {
        self.potential.get_or_insert_with(|| "square".into());
        self.params.get_or_insert_with(|| "2,1".into());
        self.nodes.get_or_insert(400);
        self.nodes_outside.get_or_insert(40);
        self.tol.get_or_insert(1e-8);
        if self.potential.as_deref() != Some("soft-sphere") {
            let pot = potential(self.potential.as_ref().unwrap(), self.params.as_ref().unwrap())?;
            let r = *self.rmax.get_or_insert(2.0 * pot.support_radius());
            if !(r >= pot.support_radius()) {
                bail!("rmax {r} lies inside the potential support");
            }
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let tol = self.tol.unwrap();
        let spec = GridSpec {
            nodes_inside: self.nodes.unwrap(),
            nodes_outside: self.nodes_outside.unwrap(),
            r_max: self.rmax,
            ..GridSpec::default()
        };
        if self.potential.as_deref() == Some("soft-sphere") {
            let p = parse_list(self.params.as_ref().unwrap())?;
            if p.len() != 3 {
                bail!("soft-sphere ladder takes range,v_max,rungs");
            }
            let mut table = Table::new(&["v0", "a", "a_over_range"]);
            let mut rows = Vec::new();
            let mut checks = Vec::new();
            for w in soft_sphere_ladder(p[0], p[1], p[2] as usize)? {
                let v0 = w.value(0.0);
                // resolve the interior wavelength of tall wells
                let nodes = spec.nodes_inside.max((40.0 * v0.sqrt() * p[0]).ceil() as usize);
                let sol = scattering::solve_zero_energy(&w, &GridSpec { r_max: None, nodes_inside: nodes, ..spec })?;
                let res = scattering::residuals(&sol);
                checks.push(Check::at_most(format!("eight_pi_a[v0={v0:e}]"), res.eight_pi_a, tol));
                table.push_f64(&[v0, sol.a, sol.a / p[0]]);
                rows.push(json!({"v0": v0, "a": sol.a, "residuals": res}));
            }
            return Ok(Outcome { json: json!({"ladder": rows}), table: Some(table), summary: Vec::new(), checks });
        }
        let pot = potential(self.potential.as_ref().unwrap(), self.params.as_ref().unwrap())?;
        let sol = scattering::solve_zero_energy(&pot, &spec)?;
        let res = scattering::residuals(&sol);
        let mut table = Table::new(&["r", "phi", "u"]);
        for ((r, phi), u) in sol.r_grid.iter().zip(&sol.phi).zip(&sol.u) {
            table.push_f64(&[*r, *phi, *u]);
        }
        let checks = vec![
            Check::at_most("eight_pi_a", res.eight_pi_a, tol),
            Check::at_most("exterior_law", res.exterior_law, tol),
            Check::at_most("energy_identity", res.energy_identity, 1e-6),
        ];
        let rows: Vec<[f64; 3]> = sol.r_grid.iter().zip(&sol.phi).zip(&sol.u).map(|((r, phi), u)| [*r, *phi, *u]).collect();
        Ok(Outcome {
            json: json!({"a": sol.a, "residuals": res, "columns": ["r", "phi", "u"], "table": rows}),
            table: Some(table),
            summary: vec![("a".into(), sol.a), ("eight_pi_a_residual".into(), res.eight_pi_a)],
            checks,
        })
    }
}

// ---------------------------------------------------------------- hy

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HyArgs {
    /// Total density
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub rho_up: Option<f64>,
    #[arg(long)]
    pub rho_down: Option<f64>,
    /// Scattering length; computed from the potential when absent
    #[arg(long)]
    pub a: Option<f64>,
    /// Split --rho equally between the spins
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub symmetric: Option<bool>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub params: Option<String>,
}

impl HyArgs {
    fn resolve(mut self) -> Result<Self> {
        match (self.rho, self.rho_up, self.rho_down) {
            (_, Some(u), Some(d)) => {
                if let Some(r) = self.rho {
                    if (r - (u + d)).abs() > 1e-12 * r.abs() {
                        bail!("--rho {r} disagrees with --rho-up + --rho-down = {}", u + d);
                    }
                }
                self.symmetric = Some(u == d);
                self.rho = Some(u + d);
            }
            (Some(r), None, None) => {
                self.symmetric = Some(true);
                self.rho_up = Some(0.5 * r);
                self.rho_down = Some(0.5 * r);
            }
            (None, None, None) => bail!("give --rho or both --rho-up and --rho-down"),
            _ => bail!("--rho-up and --rho-down go together"),
        }
        SpinDensities::new(self.rho_up.unwrap(), self.rho_down.unwrap())?;
        if self.a.is_none() {
            let kind = self.potential.get_or_insert_with(|| "square".into()).clone();
            let params = self.params.get_or_insert_with(|| "2,1".into()).clone();
            self.a = Some(solve(&kind, &params)?.a);
        }
        if !(self.a.unwrap() >= 0.0) {
            bail!("scattering length must be >= 0");
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let d = SpinDensities::new(self.rho_up.unwrap(), self.rho_down.unwrap())?;
        let e = hyformula::huang_yang_energy(&d, self.a.unwrap())?;
        let mut table = Table::new(&["term", "energy_density"]);
        let summary = vec![
            ("kinetic".to_string(), e.kinetic),
            ("second_order".to_string(), e.second_order),
            ("third_order".to_string(), e.third_order),
            ("total".to_string(), e.total),
        ];
        for (k, v) in &summary {
            table.push(vec![k.clone(), format!("{v:e}")]);
        }
        Ok(Outcome { json: json!({"densities": d, "a": self.a, "energy": e}), table: Some(table), summary, checks: Vec::new() })
    }
}

// ---------------------------------------------------------------- fcurve

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FcurveArgs {
    #[arg(long)]
    pub xmin: Option<f64>,
    #[arg(long)]
    pub xmax: Option<f64>,
    /// Number of grid points
    #[arg(long)]
    pub n: Option<usize>,
}

impl FcurveArgs {
    fn resolve(mut self) -> Result<Self> {
        let lo = *self.xmin.get_or_insert(0.0);
        let hi = *self.xmax.get_or_insert(4.0);
        let n = *self.n.get_or_insert(401);
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            bail!("need 0 <= xmin < xmax, got [{lo}, {hi}]");
        }
        if n < 2 {
            bail!("need at least 2 grid points");
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let (lo, hi, n) = (self.xmin.unwrap(), self.xmax.unwrap(), self.n.unwrap());
        let mut table = Table::new(&["x", "F"]);
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let fx = hyformula::f(x)?;
            table.push_f64(&[x, fx]);
            pts.push([x, fx]);
        }
        let min = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        Ok(Outcome {
            json: json!({"columns": ["x", "F"], "table": pts}),
            table: Some(table),
            summary: vec![("min_F".into(), min)],
            checks: vec![Check::at_least("F_nonnegative", min, 0.0)],
        })
    }
}

// ---------------------------------------------------------------- pauli-mc

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PauliArgs {
    #[arg(long)]
    pub kup: Option<f64>,
    #[arg(long)]
    pub kdown: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Defaults to a hash of the remaining configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Radial shells per ball (strata = shells^2)
    #[arg(long)]
    pub strata: Option<usize>,
    #[arg(long)]
    pub polar: Option<usize>,
    #[arg(long)]
    pub azimuth: Option<usize>,
    /// Compare with the closed form (eps = 0 only)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle: Option<bool>,
}

impl PauliArgs {
    fn resolve(mut self) -> Result<Self> {
        let k1 = *self.kup.get_or_insert(1.0);
        let k2 = *self.kdown.get_or_insert(1.0);
        let eps = *self.eps.get_or_insert(0.0);
        self.samples.get_or_insert(100_000);
        self.strata.get_or_insert(8);
        let rule = AngularRule::default();
        self.polar.get_or_insert(rule.polar);
        self.azimuth.get_or_insert(rule.azimuth);
        self.oracle.get_or_insert(eps == 0.0);
        if !(k1 >= 0.0 && k2 >= 0.0 && eps >= 0.0) {
            bail!("momenta and eps must be >= 0");
        }
        if self.oracle == Some(true) && eps != 0.0 {
            bail!("the closed-form oracle exists only at eps = 0");
        }
        if self.seed.is_none() {
            self.seed = Some(hash_seed(&self)?);
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let mc = McParams {
            samples: self.samples.unwrap(),
            seed: self.seed.unwrap(),
            shells: self.strata.unwrap(),
            angular: AngularRule { polar: self.polar.unwrap(), azimuth: self.azimuth.unwrap() },
            p_max: None,
        };
        let (k1, k2) = (self.kup.unwrap(), self.kdown.unwrap());
        let est = paulisum::pauli_blocked_integral(k1, k2, self.eps.unwrap(), &mc)?;
        let mut table = Table::new(&["shell_up", "shell_down", "mean", "std_error", "n"]);
        for s in est.breakdown.iter().flatten() {
            table.push(vec![s.shell_up.to_string(), s.shell_down.to_string(), format!("{:e}", s.mean), format!("{:e}", s.std_error), s.n.to_string()]);
        }
        let mut summary = vec![("value".to_string(), est.value), ("std_error".to_string(), est.std_error)];
        let mut checks = Vec::new();
        let mut oracle = Value::Null;
        if self.oracle == Some(true) {
            let (r1, r2) = (density_from_kf(k1), density_from_kf(k2));
            let exact = if r1 == 0.0 || r2 == 0.0 { 0.0 } else { r1.powf(7.0 / 3.0) * hyformula::f(r2 / r1)? };
            let z = if est.std_error > 0.0 { (est.value - exact).abs() / est.std_error } else { (est.value - exact).abs() };
            checks.push(Check::at_most("oracle_std_errors", z, 3.0));
            summary.push(("oracle".into(), exact));
            oracle = json!(exact);
        }
        Ok(Outcome { json: json!({"estimate": est, "oracle": oracle}), table: Some(table), summary, checks })
    }
}

// ---------------------------------------------------------------- lattice

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeArgs {
    /// Box side; defaults to 40 / k_F(up)
    #[arg(long)]
    pub boxsize: Option<f64>,
    #[arg(long)]
    pub rho_up: Option<f64>,
    #[arg(long)]
    pub rho_down: Option<f64>,
    /// Momentum cutoff of the phi-hat table
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Defaults to rho^(2/3 + delta)
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub params: Option<String>,
    /// Comma list of k_F L values for the 1/L extrapolation of the FFG energy
    #[arg(long)]
    pub extrapolate: Option<String>,
    /// Samples for the continuum comparison (0 skips it)
    #[arg(long)]
    pub continuum_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl LatticeArgs {
    fn resolve(mut self) -> Result<Self> {
        let ru = *self.rho_up.get_or_insert(5e-3);
        let rd = *self.rho_down.get_or_insert(5e-3);
        let d = SpinDensities::new(ru, rd)?;
        positive("rho_up", ru)?;
        self.boxsize.get_or_insert(40.0 / d.kf_up());
        self.cutoff.get_or_insert(16.0);
        let gamma = *self.gamma.get_or_insert(DEFAULT_GAMMA);
        check_gamma(gamma)?;
        let delta = *self.delta.get_or_insert(DEFAULT_DELTA);
        positive("eps", *self.eps.get_or_insert(d.total().powf(2.0 / 3.0 + delta)))?;
        self.potential.get_or_insert_with(|| "square".into());
        self.params.get_or_insert_with(|| "2,1".into());
        self.continuum_samples.get_or_insert(20_000);
        if let Some(list) = &self.extrapolate {
            let v = parse_list(list)?;
            if v.len() < 3 || v.windows(2).any(|w| w[1] <= w[0]) {
                bail!("--extrapolate needs at least 3 increasing k_F L values");
            }
        }
        if self.seed.is_none() {
            self.seed = Some(hash_seed(&self)?);
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let d = SpinDensities::new(self.rho_up.unwrap(), self.rho_down.unwrap())?;
        let l = self.boxsize.unwrap();
        let eps = self.eps.unwrap();
        let kmax = d.kf_up().max(d.kf_down());
        let sol = solve(self.potential.as_ref().unwrap(), self.params.as_ref().unwrap())?;
        let lat = lattice::build(l, &d, kmax)?;
        let ffg = lattice::ffg_energy(&lat, sol.potential.v_hat_zero());
        let per = scattering::periodize(&sol, l, d.total(), self.gamma.unwrap(), self.cutoff.unwrap())?;
        let cs = lattice::correction_lattice_sum(&lat, &per, eps)?;
        let mut summary = vec![
            ("n_up".to_string(), lat.n[0] as f64),
            ("n_down".to_string(), lat.n[1] as f64),
            ("kinetic_per_volume".to_string(), ffg.kinetic_per_volume),
            ("leading_per_volume".to_string(), ffg.leading_per_volume),
            ("correction_per_volume".to_string(), cs.per_volume),
            ("truncation_bound".to_string(), cs.truncation_bound),
        ];
        let mut checks = Vec::new();
        let mut continuum = Value::Null;
        let n = self.continuum_samples.unwrap();
        if n > 0 {
            let dl = SpinDensities::new(lat.lattice_density(0), lat.lattice_density(1))?;
            let mc = McParams { samples: n, seed: self.seed.unwrap(), ..McParams::default() };
            let (second, err) = paulisum::blocked_second_order(&sol, &dl, eps, &mc)?;
            let rel = (cs.per_volume - second).abs() / second.abs();
            summary.push(("continuum_per_volume".into(), second));
            summary.push(("relative_gap".into(), rel));
            checks.push(Check::at_most("correction_vs_continuum", rel, 0.02));
            continuum = json!({"value": second, "std_error": err, "relative_gap": rel});
        }
        let mut table = None;
        let mut extrap = Value::Null;
        if let Some(list) = &self.extrapolate {
            let mut t = Table::new(&["L", "kinetic_per_volume"]);
            let mut pts = Vec::new();
            for kl in parse_list(list)? {
                let li = kl / d.kf_up().max(d.kf_down());
                let e = lattice::ffg_energy(&lattice::build(li, &d, kmax)?, 0.0);
                t.push_f64(&[li, e.kinetic_per_volume]);
                pts.push((li, e.kinetic_per_volume));
            }
            let fit = lattice::extrapolate(&pts)?;
            let exact = lattice::continuum_kinetic(&d);
            let rel = (fit.limit - exact).abs() / exact;
            checks.push(Check::at_most("ffg_extrapolation", rel, 5e-3));
            summary.push(("ffg_limit".into(), fit.limit));
            extrap = json!({"fit": fit, "continuum": exact, "relative_error": rel, "points": pts});
            table = Some(t);
        }
        Ok(Outcome {
            json: json!({"lattice": {"l": l, "n": lat.n, "m_fermi": lat.m_fermi, "k_f": lat.k_f}, "ffg": ffg, "correction": cs, "continuum": continuum, "extrapolation": extrap}),
            table,
            summary,
            checks,
        })
    }
}

// ---------------------------------------------------------------- tscaling

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TscalingArgs {
    /// Largest total density of the family
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// k_F L held fixed along the family
    #[arg(long)]
    pub kfl: Option<f64>,
}

impl TscalingArgs {
    fn resolve(mut self) -> Result<Self> {
        positive("rho", *self.rho.get_or_insert(1e-4))?;
        check_gamma(*self.gamma.get_or_insert(DEFAULT_GAMMA))?;
        positive("delta", *self.delta.get_or_insert(DEFAULT_DELTA))?;
        positive("kfl", *self.kfl.get_or_insert(40.0))?;
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let d = SpinDensities::symmetric(self.rho.unwrap())?;
        let suite = lattice::t_integral_suite(&d, self.gamma.unwrap(), self.delta.unwrap(), self.kfl.unwrap() / d.kf_up())?;
        let mut table = Table::new(&["label", "slope", "expected", "r_squared", "passes"]);
        let mut checks = Vec::new();
        let mut summary = Vec::new();
        for f in &suite {
            table.push(vec![f.label.clone(), format!("{:e}", f.fit.slope), format!("{:e}", f.expected_exponent), format!("{:e}", f.fit.r_squared), f.passes.to_string()]);
            checks.push(Check::at_most(format!("exponent[{}]", f.label), (f.fit.slope - f.expected_exponent).abs(), 0.05));
            summary.push((format!("slope[{}]", f.label), f.fit.slope));
        }
        Ok(Outcome { json: json!({"fits": suite}), table: Some(table), summary, checks })
    }
}

// ---------------------------------------------------------------- heatkernel

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HeatArgs {
    /// Box side; defaults to 40 / k_F at rho / 2 per spin
    #[arg(long)]
    pub boxsize: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Lower end of the t decade; defaults to 1e-3 / P^2, P = 3 rho^(1/3 - gamma)
    #[arg(long)]
    pub tlo: Option<f64>,
}

impl HeatArgs {
    fn resolve(mut self) -> Result<Self> {
        let rho = *self.rho.get_or_insert(1e-4);
        positive("rho", rho)?;
        let gamma = *self.gamma.get_or_insert(DEFAULT_GAMMA);
        check_gamma(gamma)?;
        positive("boxsize", *self.boxsize.get_or_insert(40.0 / SpinDensities::symmetric(rho)?.kf_up()))?;
        let p = 3.0 * rho.powf(1.0 / 3.0 - gamma);
        positive("tlo", *self.tlo.get_or_insert(1e-3 / (p * p)))?;
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let (l, rho, gamma, t0) = (self.boxsize.unwrap(), self.rho.unwrap(), self.gamma.unwrap(), self.tlo.unwrap());
        let fit = lattice::heat_kernel_scaling(l, rho, gamma, t0)?;
        let mut table = Table::new(&["t", "l1_norm", "l1_norm_quadrature", "l2_norm", "l2_norm_outer", "rescaled_outer"]);
        let mut worst_l1 = 0.0f64;
        for (t, _) in &fit.points {
            let h = lattice::heat_kernel_norms(*t, l, rho, gamma)?;
            worst_l1 = worst_l1.max((h.l1_norm - 1.0).abs()).max((h.l1_norm_quadrature - 1.0).abs());
            table.push_f64(&[*t, h.l1_norm, h.l1_norm_quadrature, h.l2_norm, h.l2_norm_outer, h.l2_norm_outer / h.decay_factor]);
        }
        Ok(Outcome {
            json: json!({"fit": fit, "max_l1_deviation": worst_l1}),
            table: Some(table),
            summary: vec![("slope".into(), fit.slope), ("max_l1_deviation".into(), worst_l1)],
            checks: vec![Check::at_most("l1_norm", worst_l1, 1e-10), Check::at_most("rescaled_l2_slope", fit.slope, -0.70)],
        })
    }
}

// ---------------------------------------------------------------- fock-verify

pub const ALL_CHECKS: &str = "car,particle-hole,relation,terms,number,vphi-square,tt,rr,conjugation,ed";

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FockArgs {
    /// prop34-tiny (3+3 modes, with a 2+2 companion set for rr)
    #[arg(long)]
    pub preset: Option<String>,
    /// Explicit modes "x,y,z;x,y,z|x,y,z;..." (up | down)
    #[arg(long)]
    pub modes: Option<String>,
    /// Kernel for the correlation terms and ED: v, vphi or vf
    #[arg(long)]
    pub kernel: Option<String>,
    /// Comma list of checks
    #[arg(long)]
    pub checks: Option<String>,
    /// eps of the T kernels
    #[arg(long)]
    pub eps: Option<f64>,
    /// Random states for the conjugation and relation checks
    #[arg(long)]
    pub trials: Option<usize>,
    /// Sampled tuples for the T anticommutator
    #[arg(long)]
    pub tuples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub params: Option<String>,
}

fn parse_modes(s: &str) -> Result<[Vec<Mode>; 2]> {
    let parts: Vec<&str> = s.split('|').collect();
    if parts.len() != 2 {
        bail!("--modes needs an up list and a down list separated by '|'");
    }
    let one = |p: &str| -> Result<Vec<Mode>> {
        p.split(';')
            .filter(|t| !t.trim().is_empty())
            .map(|t| {
                let v: Vec<i64> = t.split(',').map(|c| c.trim().parse::<i64>().with_context(|| format!("bad mode {t:?}"))).collect::<Result<_>>()?;
                if v.len() != 3 {
                    bail!("mode {t:?} needs three integers");
                }
                Ok([v[0], v[1], v[2]])
            })
            .collect()
    };
    Ok([one(parts[0])?, one(parts[1])?])
}

impl FockArgs {
    fn resolve(mut self) -> Result<Self> {
        if self.preset.is_none() && self.modes.is_none() {
            self.preset = Some("prop34-tiny".into());
        }
        if let Some(p) = &self.preset {
            if p != "prop34-tiny" {
                bail!("unknown preset {p:?}; available: prop34-tiny");
            }
            if self.modes.is_some() {
                bail!("--preset and --modes exclude each other");
            }
        }
        if let Some(m) = &self.modes {
            let [u, d] = parse_modes(m)?;
            if u.len() + d.len() > fockcheck::MAX_MODES {
                bail!("{} modes requested, at most {}", u.len() + d.len(), fockcheck::MAX_MODES);
            }
        }
        let k = self.kernel.get_or_insert_with(|| "v".into()).clone();
        if !["v", "vphi", "vf"].contains(&k.as_str()) {
            bail!("unknown kernel {k:?}; expected v, vphi or vf");
        }
        let checks = self.checks.get_or_insert_with(|| ALL_CHECKS.into()).clone();
        for c in checks.split(',') {
            if !ALL_CHECKS.split(',').any(|a| a == c.trim()) {
                bail!("unknown check {c:?}; available: {ALL_CHECKS}");
            }
        }
        positive("eps", *self.eps.get_or_insert(0.3))?;
        self.trials.get_or_insert(100);
        self.tuples.get_or_insert(20);
        self.potential.get_or_insert_with(|| "square".into());
        self.params.get_or_insert_with(|| "2,1".into());
        if self.seed.is_none() {
            self.seed = Some(hash_seed(&self)?);
        }
        Ok(self)
    }

    fn run(&self) -> Result<Outcome> {
        let pot = potential(self.potential.as_ref().unwrap(), self.params.as_ref().unwrap())?;
        let (main, rr_set) = match &self.modes {
            Some(m) => {
                let [u, d] = parse_modes(m)?;
                (presets::custom(&pot, &u, &d)?, None)
            }
            None => (presets::prop34_tiny(&pot)?, Some(presets::rr_tiny(&pot)?)),
        };
        let fock = &main.fock;
        let kern = &main.kernels;
        let g = kern.by_name(self.kernel.as_ref().unwrap())?;
        let seed = self.seed.unwrap();
        let mut checks = Vec::new();
        let mut details = serde_json::Map::new();
        for name in self.checks.as_ref().unwrap().split(',').map(str::trim) {
            match name {
                "car" => checks.push(Check::at_most("car", fockcheck::car_residual(fock)?, 1e-13)),
                "particle-hole" => {
                    let r = fockcheck::particle_hole(fock)?;
                    let rep = fockcheck::particle_hole_report(fock, &r)?;
                    checks.push(Check::at_most("particle_hole.vacuum", rep.vacuum_residual, 1e-12));
                    checks.push(Check::at_most("particle_hole.unitarity", rep.unitarity_residual, 1e-12));
                    checks.push(Check::at_most("particle_hole.conjugation", rep.conjugation_residual, 1e-12));
                    details.insert(name.into(), json!(rep));
                }
                "relation" => checks.push(Check::at_most("relation", fockcheck::relation_check_random(fock, self.trials.unwrap(), seed)?, 1e-12)),
                "terms" => terms(fock, g, &mut checks)?,
                "number" => {
                    let h = fockcheck::hamiltonian(fock, g).total().to_dense(fock)?;
                    let mut worst = 0.0f64;
                    for s in 0..2 {
                        let mut n = fockcheck::OpSum::new();
                        for (i, m) in fock.modes.iter().enumerate() {
                            if m.spin == s {
                                n.add(1.0, vec![(i, true), (i, false)]);
                            }
                        }
                        let n = n.to_dense(fock)?;
                        worst = worst.max((&h * &n - &n * &h).amax());
                    }
                    checks.push(Check::at_most("number_conservation", worst, 1e-11));
                }
                "vphi-square" => {
                    let rep = fockcheck::verify_vphi_square_identity(fock, kern)?;
                    checks.push(Check::at_most("vphi_square.global", rep.global_residual, 1e-10));
                    checks.push(Check::at_most("vphi_square.subspace", rep.subspace_residual, 1e-10));
                    details.insert(name.into(), json!(rep));
                }
                "tt" => {
                    let tuples = fockcheck::sample_tuples(fock, self.tuples.unwrap(), seed)?;
                    let mut worst = 0.0f64;
                    for t in &tuples {
                        worst = worst.max(fockcheck::verify_tt_anticommutator(fock, t)?);
                    }
                    checks.push(Check::at_most("tt_anticommutator", worst, 1e-12));
                    details.insert(name.into(), json!({"tuples": tuples, "max_residual": worst}));
                }
                "rr" => {
                    let set = rr_set.as_ref().unwrap_or(&main);
                    let rep = fockcheck::verify_rr_decomposition(&set.fock, &set.kernels.phi, self.eps.unwrap())?;
                    checks.push(Check::at_most("rr.residual", rep.residual / rep.lhs_norm.max(1.0), 1e-9));
                    for (j, (lo, hi)) in rep.extremes.iter().enumerate() {
                        if j >= 8 {
                            checks.push(Check::at_most(format!("rr.I{}_max_eigenvalue", j + 1), *hi, 1e-10));
                        } else if j >= 3 {
                            checks.push(Check::at_least(format!("rr.I{}_min_eigenvalue", j + 1), *lo, -1e-10));
                        }
                    }
                    details.insert(name.into(), json!(rep));
                }
                "conjugation" => {
                    let rep = fockcheck::conjugation_lower_bound_check(fock, &kern.v, self.trials.unwrap(), seed)?;
                    checks.push(Check::at_least("conjugation.min_gap", rep.min_gap, -1e-10));
                    checks.push(Check::at_most("conjugation.equal_spin_mismatch", rep.max_equal_spin_mismatch, 1e-10));
                    details.insert(name.into(), json!(rep));
                }
                "ed" => {
                    let h = fockcheck::hamiltonian(fock, g).total();
                    let spectrum = fockcheck::tiny_ed(fock, &h)?;
                    let n = fock.ball_counts();
                    let ffg = fock.ffg_state() as usize;
                    let e_ffg = h.to_dense(fock)?[(ffg, ffg)];
                    let gs = spectrum.iter().find(|s| s.n_up == n[0] && s.n_down == n[1]).map(|s| s.lowest[0]).unwrap_or(f64::NAN);
                    checks.push(Check::at_most("ed.variational", gs - e_ffg, 1e-12));
                    details.insert(name.into(), json!(spectrum));
                }
                _ => unreachable!(),
            }
        }
        let mut table = Table::new(&["check", "value", "tolerance", "passed"]);
        for c in &checks {
            table.push(vec![c.name.clone(), format!("{:e}", c.value), format!("{:e}", c.tolerance), c.passed.to_string()]);
        }
        let modes: Vec<Value> = fock.modes.iter().map(|m| json!({"k": m.k, "spin": m.spin, "in_fermi_ball": m.in_fermi_ball})).collect();
        let summary = checks.iter().map(|c| (c.name.clone(), c.value)).collect();
        Ok(Outcome { json: json!({"modes": modes, "l": fock.l, "checks": checks, "details": details}), table: Some(table), summary, checks })
    }
}

fn terms(fock: &FockSpace, g: &TorusFunction, checks: &mut Vec<Check>) -> Result<()> {
    let c = fockcheck::build_correlation_terms(fock, g);
    for (name, op) in c.named() {
        let h = OperatorHandle::new(fock, name, op)?;
        checks.push(Check { name: format!("terms.{name}_hermitian"), value: if h.hermitian { 0.0 } else { 1.0 }, tolerance: 0.0, passed: h.hermitian });
        if name == "H0" || name == "Q4" {
            checks.push(Check::at_least(format!("terms.{name}_min_eigenvalue"), h.extremes().0, -1e-10));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- dispatch

pub const SUBCOMMANDS: [&str; 8] = ["scatter", "hy", "fcurve", "pauli-mc", "lattice", "tscaling", "heatkernel", "fock-verify"];

/// Resolves a config document for a subcommand and runs it.
pub fn run_value(sub: &str, cfg: Value) -> Result<(Value, Outcome)> {
    macro_rules! go {
        ($t:ty) => {{
            let a: $t = overlay(&<$t>::default(), Some(cfg))?;
            let a = a.resolve()?;
            let v = serde_json::to_value(&a)?;
            Ok((v, a.run()?))
        }};
    }
    match sub {
        "scatter" => go!(ScatterArgs),
        "hy" => go!(HyArgs),
        "fcurve" => go!(FcurveArgs),
        "pauli-mc" => go!(PauliArgs),
        "lattice" => go!(LatticeArgs),
        "tscaling" => go!(TscalingArgs),
        "heatkernel" => go!(HeatArgs),
        "fock-verify" => go!(FockArgs),
        _ => bail!("unknown subcommand {sub:?} for sweep; available: {}", SUBCOMMANDS.join(", ")),
    }
}

/// Resolution only, used to reject bad configurations before any work.
pub fn resolve_value(sub: &str, cfg: Value) -> Result<Value> {
    macro_rules! go {
        ($t:ty) => {{
            let a: $t = overlay(&<$t>::default(), Some(cfg))?;
            Ok(serde_json::to_value(&a.resolve()?)?)
        }};
    }
    match sub {
        "scatter" => go!(ScatterArgs),
        "hy" => go!(HyArgs),
        "fcurve" => go!(FcurveArgs),
        "pauli-mc" => go!(PauliArgs),
        "lattice" => go!(LatticeArgs),
        "tscaling" => go!(TscalingArgs),
        "heatkernel" => go!(HeatArgs),
        "fock-verify" => go!(FockArgs),
        _ => bail!("unknown subcommand {sub:?}; available: {}", SUBCOMMANDS.join(", ")),
    }
}

// ---------------------------------------------------------------- sweep

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// Subcommand to repeat
    #[arg(long)]
    pub command: Option<String>,
    /// Config key to vary
    #[arg(long)]
    pub param: Option<String>,
    /// Comma list of values
    #[arg(long)]
    pub values: Option<String>,
    /// Base configuration of the swept subcommand
    #[arg(skip)]
    pub base: Option<Value>,
}

impl SweepArgs {
    pub fn resolve(mut self) -> Result<Self> {
        let Some(cmd) = self.command.clone() else { bail!("sweep needs --command") };
        let Some(param) = self.param.clone() else { bail!("sweep needs --param") };
        let Some(values) = self.values.clone() else { bail!("sweep needs --values") };
        let vals = parse_list(&values)?;
        if vals.is_empty() {
            bail!("sweep needs at least one value");
        }
        let base = self.base.take().unwrap_or_else(|| json!({}));
        // resolve every point up front so bad values fail before any work
        for v in &vals {
            resolve_value(&cmd, with_param(&base, &param, *v))?;
        }
        self.base = Some(base);
        Ok(self)
    }

    pub fn run(&self) -> Result<Outcome> {
        let (cmd, param) = (self.command.as_ref().unwrap(), self.param.as_ref().unwrap());
        let base = self.base.clone().unwrap_or_else(|| json!({}));
        let mut rows = Vec::new();
        let mut header: Vec<String> = vec![param.clone()];
        let mut records = Vec::new();
        let mut checks = Vec::new();
        for v in parse_list(self.values.as_ref().unwrap())? {
            let (cfg, out) = run_value(cmd, with_param(&base, param, v))?;
            if header.len() == 1 {
                header.extend(out.summary.iter().map(|(k, _)| k.clone()));
            }
            let mut row = vec![format!("{v:e}")];
            row.extend(out.summary.iter().map(|(_, x)| format!("{x:e}")));
            rows.push(row);
            for c in &out.checks {
                checks.push(Check { name: format!("{param}={v:e}:{}", c.name), ..c.clone() });
            }
            records.push(json!({"value": v, "config": cfg, "result": out.json}));
        }
        let table = Table { header, rows };
        Ok(Outcome { json: json!({"command": cmd, "param": param, "runs": records}), table: Some(table), summary: Vec::new(), checks })
    }
}

fn with_param(base: &Value, param: &str, v: f64) -> Value {
    let mut b = base.clone();
    let key = param.replace('-', "_");
    let val = if v.fract() == 0.0 && v.abs() < 9.0e15 && ["n", "samples", "nodes", "nodes_outside", "strata", "polar", "azimuth", "trials", "tuples", "continuum_samples", "seed"].contains(&key.as_str()) {
        json!(v as u64)
    } else {
        json!(v)
    };
    b.as_object_mut().unwrap().insert(key, val);
    b
}
