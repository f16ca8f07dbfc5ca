//! Zero-energy scattering: 2 Lap(phi) + V (1 - phi) = 0, phi -> 0 at infinity.
//!
//! The radial reduction u(r) = r (1 - phi(r)) obeys u'' = (V/2) u with
//! u(0) = 0. Outside the support u is affine, u = r - a after normalisation,
//! which defines the scattering length a and gives phi = a / r there.

use crate::error::{input, Error, Result};
use crate::potential::RadialPotential;
use crate::quad::{self, KahanSum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Radial grid and tolerance settings for [`solve_zero_energy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of uniform intervals on [0, support_radius].
    pub nodes_inside: usize,
    /// Number of uniform intervals on [support_radius, r_max].
    pub nodes_outside: usize,
    /// Outer radius; `None` means twice the support radius.
    pub r_max: Option<f64>,
    /// Relative tolerance of the adaptive ODE stepper.
    pub ode_rtol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nodes_inside: 400, nodes_outside: 40, r_max: None, ode_rtol: 1e-12 }
    }
}

/// Solution of the zero-energy scattering problem on a radial grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatteringSolution {
    /// s-wave scattering length.
    pub a: f64,
    pub r_grid: Vec<f64>,
    /// phi(r_i), in [0, 1].
    pub phi: Vec<f64>,
    /// u(r_i) = r_i (1 - phi(r_i)), normalised so that u = r - a outside.
    pub u: Vec<f64>,
    /// u'(r_i).
    pub du: Vec<f64>,
    pub potential: RadialPotential,
    /// Max deviation of u from the affine law r - a on exterior nodes.
    pub exterior_residual: f64,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate u'' = (V/2) u from `r0` to `r1` with adaptive Dormand-Prince steps.
fn dp45_interval<F: Fn(f64) -> f64>(v: F, r0: f64, r1: f64, y0: [f64; 2], rtol: f64) -> Result<[f64; 2]> {
    let rhs = |r: f64, y: [f64; 2]| [y[1], 0.5 * v(r) * y[0]];
    let atol = rtol * 1e-3;
    let mut r = r0;
    let mut y = y0;
    let mut h = r1 - r0;
    let mut steps = 0usize;
    while r < r1 {
        if r + h > r1 {
            h = r1 - r;
        }
        let mut k = [[0.0; 2]; 7];
        k[0] = rhs(r, y);
        for s in 1..7 {
            let mut ys = y;
            for j in 0..s {
                ys[0] += h * A[s][j] * k[j][0];
                ys[1] += h * A[s][j] * k[j][1];
            }
            let rs = if s >= 5 { r + h } else { r + C[s] * h };
            k[s] = rhs(rs, ys);
        }
        let mut y5 = y;
        let mut e = [0.0; 2];
        for s in 0..7 {
            for c in 0..2 {
                y5[c] += h * B5[s] * k[s][c];
                e[c] += h * (B5[s] - B4[s]) * k[s][c];
            }
        }
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let sc = atol + rtol * y[c].abs().max(y5[c].abs());
            err = err.max(e[c].abs() / sc);
        }
        if err <= 1.0 {
            r += h;
            y = y5;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        steps += 1;
        if steps > 1_000_000 || h < 1e-15 * r1.abs().max(1.0) {
            return Err(Error::Convergence(format!("ODE stepper stalled near r = {r}")));
        }
    }
    Ok(y)
}

/// Build the radial grid: uniform inside, uniform outside, plus any table nodes.
fn build_grid(pot: &RadialPotential, spec: &GridSpec) -> Result<Vec<f64>> {
    let rs = pot.support_radius();
    let r_max = spec.r_max.unwrap_or(2.0 * rs);
    if spec.nodes_inside < 2 || spec.nodes_outside < 2 {
        return input("grid needs at least two intervals inside and outside the support");
    }
    if !(r_max > rs) {
        return input(format!("grid does not cover the support: r_max = {r_max} <= {rs}"));
    }
    let mut g: Vec<f64> = (0..=spec.nodes_inside).map(|i| rs * i as f64 / spec.nodes_inside as f64).collect();
    for i in 1..=spec.nodes_outside {
        g.push(rs + (r_max - rs) * i as f64 / spec.nodes_outside as f64);
    }
    for b in pot.breakpoints() {
        if b > 0.0 && b < rs {
            g.push(b);
        }
    }
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * rs);
    *g.last_mut().unwrap() = r_max;
    Ok(g)
}

/// V restricted to the open interval (a, b) and extended by its one-sided limits.
fn interval_potential(pot: &RadialPotential, a: f64, b: f64) -> impl Fn(f64) -> f64 + '_ {
    let va = pot.value_limit(a, false);
    let vb = pot.value_limit(b, true);
    move |r| {
        if r <= a {
            va
        } else if r >= b {
            vb
        } else {
            pot.value(r)
        }
    }
}

/// Solve the zero-energy scattering equation for `pot` on the grid `spec`.
pub fn solve_zero_energy(pot: &RadialPotential, spec: &GridSpec) -> Result<ScatteringSolution> {
    if !(spec.ode_rtol > 0.0 && spec.ode_rtol < 1e-3) {
        return input("ODE tolerance must lie in (0, 1e-3)");
    }
    let grid = build_grid(pot, spec)?;
    let n = grid.len();
    let mut u = vec![0.0; n];
    let mut du = vec![0.0; n];
    du[0] = 1.0;
    for i in 1..n {
        let v = interval_potential(pot, grid[i - 1], grid[i]);
        let y = dp45_interval(v, grid[i - 1], grid[i], [u[i - 1], du[i - 1]], spec.ode_rtol)?;
        u[i] = y[0];
        du[i] = y[1];
    }
    let rs = pot.support_radius();
    let (r1, r2) = (grid[n - 2], grid[n - 1]);
    let slope = (u[n - 1] - u[n - 2]) / (r2 - r1);
    if !(slope > 0.0) {
        return Err(Error::Convergence("non-positive exterior slope".into()));
    }
    let a = r1 - u[n - 2] / slope;
    for i in 0..n {
        u[i] /= slope;
        du[i] /= slope;
    }
    let mut exterior_residual: f64 = 0.0;
    for i in 0..n {
        if grid[i] >= rs {
            exterior_residual = exterior_residual.max((u[i] - (grid[i] - a)).abs());
        }
    }
    if exterior_residual > 1e3 * spec.ode_rtol * r2.max(1.0) {
        return Err(Error::Convergence(format!("exterior solution is not affine: residual {exterior_residual:e}")));
    }
    let phi: Vec<f64> = grid
        .iter()
        .zip(&u)
        .enumerate()
        .map(|(i, (&r, &ui))| if i == 0 { 1.0 - du[0] } else { 1.0 - ui / r })
        .collect();
    Ok(ScatteringSolution { a, r_grid: grid, phi, u, du, potential: pot.clone(), exterior_residual })
}

fn hermite(t: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

/// Local reconstruction of (r, V(r), u(r), u'(r)) inside one grid interval.
struct Cell<'a> {
    sol: &'a ScatteringSolution,
    i: usize,
    dd0: f64,
    dd1: f64,
}

impl<'a> Cell<'a> {
    fn new(sol: &'a ScatteringSolution, i: usize) -> Self {
        let (a, b) = (sol.r_grid[i], sol.r_grid[i + 1]);
        let dd0 = 0.5 * sol.potential.value_limit(a, false) * sol.u[i];
        let dd1 = 0.5 * sol.potential.value_limit(b, true) * sol.u[i + 1];
        Self { sol, i, dd0, dd1 }
    }
    fn bounds(&self) -> (f64, f64) {
        (self.sol.r_grid[self.i], self.sol.r_grid[self.i + 1])
    }
    fn at(&self, r: f64) -> (f64, f64) {
        let (a, b) = self.bounds();
        let h = b - a;
        let t = (r - a) / h;
        let s = self.sol;
        let i = self.i;
        let u = hermite(t, h, s.u[i], s.du[i], s.u[i + 1], s.du[i + 1]);
        let du = hermite(t, h, s.du[i], self.dd0, s.du[i + 1], self.dd1);
        (u, du)
    }
    fn v(&self, r: f64) -> f64 {
        let (a, b) = self.bounds();
        interval_potential(&self.sol.potential, a, b)(r)
    }
}

impl ScatteringSolution {
    pub fn support_radius(&self) -> f64 {
        self.potential.support_radius()
    }

    pub fn r_max(&self) -> f64 {
        *self.r_grid.last().unwrap()
    }

    /// Composite 8-point Gauss-Legendre over grid cells of g(r, V, u, u').
    fn grid_integral<G: Fn(f64, f64, f64, f64) -> f64>(&self, only_support: bool, g: G) -> f64 {
        let rs = self.support_radius();
        let mut acc = KahanSum::new();
        for i in 0..self.r_grid.len() - 1 {
            if only_support && self.r_grid[i] >= rs {
                break;
            }
            let cell = Cell::new(self, i);
            let (a, b) = cell.bounds();
            acc.add(quad::gl_integrate(8, a, b, |r| {
                let (u, du) = cell.at(r);
                g(r, cell.v(r), u, du)
            }));
        }
        acc.value()
    }

    /// phi(r) by cubic Hermite interpolation inside the grid, a / r beyond.
    pub fn phi_at(&self, r: f64) -> f64 {
        if r >= self.r_max() {
            return self.a / r;
        }
        let i = match self.r_grid.binary_search_by(|x| x.total_cmp(&r)) {
            Ok(i) => return self.phi[i],
            Err(i) => i - 1,
        };
        let (u, _) = Cell::new(self, i).at(r);
        1.0 - u / r
    }

    /// int V (1 - phi) d^3x = 4 pi int V u r dr; equals 8 pi a.
    pub fn integral_v_f(&self) -> f64 {
        4.0 * PI * self.grid_integral(true, |r, v, u, _| v * u * r)
    }

    /// int V (1 - phi^2) d^3x.
    pub fn integral_v_one_minus_phi2(&self) -> f64 {
        4.0 * PI
            * self.grid_integral(true, |r, v, u, _| {
                let phi = 1.0 - u / r;
                v * (1.0 - phi * phi) * r * r
            })
    }

    /// int V phi^2 d^3x.
    pub fn integral_v_phi2(&self) -> f64 {
        4.0 * PI
            * self.grid_integral(true, |r, v, u, _| {
                let phi = 1.0 - u / r;
                v * phi * phi * r * r
            })
    }

    /// int |grad phi|^2 d^3x, with the exterior a / r tail added analytically.
    pub fn integral_grad_phi2(&self) -> f64 {
        let inner = self.grid_integral(false, |r, _, u, du| {
            let x = (u - r * du) / r;
            x * x
        });
        4.0 * PI * (inner + self.a * self.a / self.r_max())
    }

    /// (V f)^(p) = 4 pi int V u r sinc(p r) dr = 2 p^2 phi-hat(p), finite at p = 0.
    pub fn vf_hat(&self, p: f64) -> f64 {
        4.0 * PI * self.oscillatory_support_integral(p, |r, v, u| v * u * r * sinc(p * r))
    }

    /// (V f)^(p) - (V f)^(0), computed without cancellation.
    pub fn vf_hat_shift(&self, p: f64) -> f64 {
        4.0 * PI * self.oscillatory_support_integral(p, |r, v, u| v * u * r * sinc_minus_one(p * r))
    }

    fn oscillatory_support_integral<G: Fn(f64, f64, f64) -> f64>(&self, p: f64, g: G) -> f64 {
        let rs = self.support_radius();
        let mut acc = KahanSum::new();
        for i in 0..self.r_grid.len() - 1 {
            if self.r_grid[i] >= rs {
                break;
            }
            let cell = Cell::new(self, i);
            let (a, b) = cell.bounds();
            let m = ((p * (b - a)) / 1.5).ceil().max(1.0) as usize;
            let h = (b - a) / m as f64;
            for j in 0..m {
                let (lo, hi) = (a + j as f64 * h, a + (j + 1) as f64 * h);
                acc.add(quad::gl_integrate(8, lo, hi, |r| {
                    let (u, _) = cell.at(r);
                    g(r, cell.v(r), u)
                }));
            }
        }
        acc.value()
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

fn sinc_minus_one(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let x2 = x * x;
        // -x^2/6 + x^4/120 - x^6/5040 + ...
        let mut term = -x2 / 6.0;
        let mut s = term;
        let mut k = 1.0;
        while term.abs() > 1e-18 * s.abs() {
            term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            s += term;
            k += 1.0;
        }
        s
    } else {
        x.sin() / x - 1.0
    }
}

/// Result of [`solve_zero_energy`] checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScatteringResiduals {
    /// |int V f - 8 pi a| / (8 pi a).
    pub eight_pi_a: f64,
    /// energy identity residual, see [`energy_identity_residual`].
    pub energy_identity: f64,
    /// max |phi(r) r - a| over exterior nodes.
    pub exterior_law: f64,
}

pub fn residuals(sol: &ScatteringSolution) -> ScatteringResiduals {
    let e = 8.0 * PI * sol.a;
    let ivf = sol.integral_v_f();
    let eight_pi_a = if e > 0.0 { (ivf - e).abs() / e } else { ivf.abs() };
    let rs = sol.support_radius();
    let exterior_law = sol
        .r_grid
        .iter()
        .zip(&sol.phi)
        .filter(|(r, _)| **r > rs)
        .map(|(r, phi)| (phi * r - sol.a).abs())
        .fold(0.0, f64::max);
    ScatteringResiduals { eight_pi_a, energy_identity: energy_identity_residual(sol), exterior_law }
}

/// |int V (1 - phi^2) - 2 int |grad phi|^2 - 8 pi a| / (8 pi a); absolute when a = 0.
pub fn energy_identity_residual(sol: &ScatteringSolution) -> f64 {
    let e = 8.0 * PI * sol.a;
    let d = sol.integral_v_one_minus_phi2() - 2.0 * sol.integral_grad_phi2() - e;
    if e > 0.0 {
        d.abs() / e
    } else {
        d.abs()
    }
}

/// phi-hat(p) = (4 pi / p) int_0^inf sin(p r) phi(r) r dr.
///
/// The grid part is integrated up to r_max and the exterior a / r tail is
/// added in closed form, 4 pi a cos(p r_max) / p^2. At p = 0 the transform
/// diverges and `f64::INFINITY` is returned.
pub fn fourier_phi(sol: &ScatteringSolution, p: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return input(format!("momentum must be >= 0, got {p}"));
    }
    if p == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut acc = KahanSum::new();
    for i in 0..sol.r_grid.len() - 1 {
        let cell = Cell::new(sol, i);
        let (a, b) = cell.bounds();
        let m = ((p * (b - a)) / 1.5).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        for j in 0..m {
            let (lo, hi) = (a + j as f64 * h, a + (j + 1) as f64 * h);
            acc.add(quad::gl_integrate(8, lo, hi, |r| {
                let (u, _) = cell.at(r);
                (p * r).sin() * (r - u)
            }));
        }
    }
    let rm = sol.r_max();
    Ok(4.0 * PI * acc.value() / p + 4.0 * PI * sol.a * (p * rm).cos() / (p * p))
}

/// Radial C-infinity bump: 1 on [0, 1], 0 on [5/4, inf), smooth in between.
pub fn chi_hat(q: f64) -> f64 {
    let t = (q - 1.0) / 0.25;
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = f(1.0 - t);
    a / (a + f(t))
}

/// Periodised scattering data on the lattice (2 pi / L) Z^3.
///
/// Every stored function is radial, so coefficients are tabulated by
/// m = |n|^2 for lattice momenta p = (2 pi / L) n. Transform convention on
/// the box: g-hat(p) = int_Lambda g(x) e^{-i p x} dx.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicScattering {
    pub l: f64,
    pub rho: f64,
    pub gamma: f64,
    pub p_cutoff: f64,
    /// Largest tabulated m = |n|^2.
    pub m_max: u64,
    /// phi-hat indexed by m; entry 0 is 0 by definition.
    pub phi: Vec<f64>,
    pub phi_lt: Vec<f64>,
    pub phi_gt: Vec<f64>,
    pub chi: Vec<f64>,
    pub scattering_length: f64,
}

impl PeriodicScattering {
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.l
    }

    /// Inner cutoff scale 4 rho^(1/3 - gamma).
    pub fn chi_scale(&self) -> f64 {
        4.0 * self.rho.powf(1.0 / 3.0 - self.gamma)
    }

    fn index(&self, n: [i64; 3]) -> Result<usize> {
        let m = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) as u64;
        if m > self.m_max {
            return Err(Error::Input(format!("momentum {n:?} beyond the tabulated cutoff")));
        }
        Ok(m as usize)
    }

    pub fn phi_hat(&self, n: [i64; 3]) -> Result<f64> {
        Ok(self.phi[self.index(n)?])
    }
    pub fn phi_hat_lt(&self, n: [i64; 3]) -> Result<f64> {
        Ok(self.phi_lt[self.index(n)?])
    }
    pub fn phi_hat_gt(&self, n: [i64; 3]) -> Result<f64> {
        Ok(self.phi_gt[self.index(n)?])
    }
    /// phi-hat by m = |n|^2.
    pub fn phi_by_m(&self, m: u64) -> Option<f64> {
        self.phi.get(m as usize).copied()
    }
}

/// True when m is a sum of three squares (Legendre).
pub fn is_three_square(mut m: u64) -> bool {
    if m == 0 {
        return true;
    }
    while m % 4 == 0 {
        m /= 4;
    }
    m % 8 != 7
}

/// Tabulate phi-hat, phi-hat^< and phi-hat^> on (2 pi / L) Z^3 up to `p_cutoff`.
pub fn periodize(sol: &ScatteringSolution, l: f64, rho: f64, gamma: f64, p_cutoff: f64) -> Result<PeriodicScattering> {
    if !(l > 2.0 * sol.support_radius()) {
        return input(format!("box side {l} must exceed twice the support radius"));
    }
    if !(gamma > 0.0 && gamma < 1.0 / 6.0) {
        return input(format!("gamma must lie in (0, 1/6), got {gamma}"));
    }
    if !(rho > 0.0) {
        return input("density must be positive");
    }
    if !(p_cutoff > 0.0) {
        return input("momentum cutoff must be positive");
    }
    let dk = 2.0 * PI / l;
    let m_max = ((p_cutoff / dk).powi(2)).floor() as u64;
    let scale = 4.0 * rho.powf(1.0 / 3.0 - gamma);
    let phi: Vec<f64> = (0..=m_max)
        .into_par_iter()
        .map(|m| {
            if m == 0 || !is_three_square(m) {
                0.0
            } else {
                fourier_phi(sol, dk * (m as f64).sqrt()).unwrap()
            }
        })
        .collect();
    let chi: Vec<f64> = (0..=m_max).map(|m| chi_hat(dk * (m as f64).sqrt() / scale)).collect();
    let phi_lt: Vec<f64> = phi.iter().zip(&chi).map(|(p, c)| p * c).collect();
    let phi_gt: Vec<f64> = phi.iter().zip(&phi_lt).map(|(p, q)| p - q).collect();
    Ok(PeriodicScattering { l, rho, gamma, p_cutoff, m_max, phi, phi_lt, phi_gt, chi, scattering_length: sol.a })
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// lambda_{p,r} = |r + p|^2 - |r|^2.
pub fn lambda(p: [f64; 3], r: [f64; 3]) -> f64 {
    dot(p, p) + 2.0 * dot(p, r)
}

/// omega-hat^eps_{r,r'}(p) = 2 |p|^2 phi-hat(p) / (lambda_{p,r} + lambda_{-p,r'} + 2 eps).
pub fn bethe_goldstone_kernel(sol: &ScatteringSolution, r: [f64; 3], rp: [f64; 3], p: [f64; 3], eps: f64) -> Result<f64> {
    if !(eps >= 0.0) {
        return input(format!("eps must be >= 0, got {eps}"));
    }
    let mp = [-p[0], -p[1], -p[2]];
    let den = lambda(p, r) + lambda(mp, rp) + 2.0 * eps;
    if !(den > 0.0) {
        return Err(Error::Domain(format!("non-positive denominator {den:e}; restrict to Pauli-allowed momenta")));
    }
    let pn = dot(p, p).sqrt();
    // phi-hat(0) = 0 on the lattice, so the zero transfer carries no weight
    let num = if pn == 0.0 { 0.0 } else { 2.0 * pn * pn * fourier_phi(sol, pn)? };
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well() -> ScatteringSolution {
        solve_zero_energy(&RadialPotential::square_well(2.0, 1.0).unwrap(), &GridSpec::default()).unwrap()
    }

    #[test]
    fn square_well_length_matches_closed_form() {
        let s = well();
        assert!((s.a - (1.0 - 1f64.tanh())).abs() < 1e-9, "a = {}", s.a);
    }

    #[test]
    fn free_equation_is_trivial() {
        let s = solve_zero_energy(&RadialPotential::square_well(0.0, 1.0).unwrap(), &GridSpec::default()).unwrap();
        assert!(s.a.abs() < 1e-12);
        assert!(s.phi.iter().all(|p| p.abs() < 1e-12));
        assert!(energy_identity_residual(&s).abs() < 1e-12);
        assert!(fourier_phi(&s, 1.3).unwrap().abs() < 1e-10);
    }

    #[test]
    fn grid_must_cover_support() {
        let v = RadialPotential::square_well(2.0, 1.0).unwrap();
        let spec = GridSpec { r_max: Some(0.5), ..GridSpec::default() };
        assert!(matches!(solve_zero_energy(&v, &spec), Err(Error::Input(_))));
    }

    #[test]
    fn chi_is_a_bump() {
        assert_eq!(chi_hat(0.3), 1.0);
        assert_eq!(chi_hat(1.0), 1.0);
        assert_eq!(chi_hat(1.25), 0.0);
        let mid = chi_hat(1.125);
        assert!((mid - 0.5).abs() < 1e-12);
        let mut last = 1.0;
        for i in 0..=100 {
            let c = chi_hat(1.0 + 0.25 * i as f64 / 100.0);
            assert!(c <= last && (0.0..=1.0).contains(&c));
            last = c;
        }
    }

    #[test]
    fn three_square_rule() {
        let brute = |m: u64| {
            let k = (m as f64).sqrt() as u64 + 1;
            (0..=k).any(|x| (0..=k).any(|y| (0..=k).any(|z| x * x + y * y + z * z == m)))
        };
        for m in 0..300 {
            assert_eq!(is_three_square(m), brute(m), "m = {m}");
        }
    }

    #[test]
    fn kernel_rejects_blocked_denominator() {
        let s = well();
        let r = bethe_goldstone_kernel(&s, [0.0; 3], [0.0; 3], [0.0; 3], 0.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
