//! Momentum lattice (2 pi / L) Z^3 with filled Fermi balls, finite-volume
//! sums and thermodynamic-limit helpers.
//!
//! Lattice momenta are stored as integer vectors n with p = (2 pi / L) n.
//! Everything that only depends on |p| is indexed by m = |n|^2, which keeps
//! ball membership and the Pauli denominators exact in integer arithmetic.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::hyformula::{fermi_momentum, SpinDensities};
use crate::quad::{gl_integrate, loglog_fit, KahanSum};
use crate::scattering::PeriodicScattering;

/// Relative slack used when deciding |k| <= k_F, so that exact ties land inside.
pub const TIE_SLACK: f64 = 1e-12;

/// Hard limit on the number of explicitly stored modes.
pub const MAX_MODES: usize = 20_000_000;

/// Integer lattice vector n, momentum (2 pi / L) n.
pub type Mode = [i64; 3];

pub fn norm2(n: Mode) -> i64 {
    n[0] * n[0] + n[1] * n[1] + n[2] * n[2]
}

/// Largest m with (2 pi / L)^2 m <= k^2 (ties included); -1 for an empty ball.
pub fn shell_threshold(k: f64, l: f64) -> i64 {
    if k <= 0.0 {
        return -1;
    }
    let x = (k * l / (2.0 * PI)).powi(2) * (1.0 + TIE_SLACK);
    x.floor() as i64
}

/// All n with |n|^2 <= m_max, ordered by |n|^2 and then lexicographically.
pub fn enumerate_ball(m_max: i64) -> Vec<Mode> {
    if m_max < 0 {
        return Vec::new();
    }
    let r = (m_max as f64).sqrt().floor() as i64 + 1;
    let mut out = Vec::new();
    for x in -r..=r {
        for y in -r..=r {
            for z in -r..=r {
                let n = [x, y, z];
                if norm2(n) <= m_max {
                    out.push(n);
                }
            }
        }
    }
    out.sort_by_key(|n| (norm2(*n), *n));
    out
}

/// r3(m): number of n in Z^3 with |n|^2 = m, for m = 0..=m_max.
pub fn shell_counts(m_max: usize) -> Vec<u64> {
    let r = (m_max as f64).sqrt().floor() as i64;
    let mut r2 = vec![0u64; m_max + 1];
    for x in -r..=r {
        let rest = m_max as i64 - x * x;
        if rest < 0 {
            continue;
        }
        let ry = (rest as f64).sqrt().floor() as i64;
        for y in -ry..=ry {
            let m = (x * x + y * y) as usize;
            if m <= m_max {
                r2[m] += 1;
            }
        }
    }
    let mut r3 = vec![0u64; m_max + 1];
    r3.par_iter_mut().enumerate().for_each(|(m, slot)| {
        let mut acc = 0u64;
        let mut z = 0usize;
        while z * z <= m {
            let c = r2[m - z * z];
            acc += if z == 0 { c } else { 2 * c };
            z += 1;
        }
        *slot = acc;
    });
    r3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentumLattice {
    pub l: f64,
    pub spacing: f64,
    pub p_cutoff: f64,
    pub densities: SpinDensities,
    /// Continuum Fermi momenta (6 pi^2 rho_sigma)^(1/3), index 0 = up.
    pub k_f: [f64; 2],
    /// Ball membership threshold on m = |n|^2 per spin.
    pub m_fermi: [i64; 2],
    /// Modes with |p| <= p_cutoff.
    pub modes: Vec<Mode>,
    pub fermi_ball: [Vec<Mode>; 2],
    pub n: [usize; 2],
}

impl MomentumLattice {
    pub fn in_ball(&self, sigma: usize, n: Mode) -> bool {
        norm2(n) <= self.m_fermi[sigma]
    }

    /// v-hat: indicator of the Fermi ball.
    pub fn v_hat(&self, sigma: usize, n: Mode) -> f64 {
        if self.in_ball(sigma, n) {
            1.0
        } else {
            0.0
        }
    }

    /// u-hat = 1 - v-hat.
    pub fn u_hat(&self, sigma: usize, n: Mode) -> f64 {
        1.0 - self.v_hat(sigma, n)
    }

    pub fn volume(&self) -> f64 {
        self.l.powi(3)
    }

    /// N_sigma / L^3.
    pub fn lattice_density(&self, sigma: usize) -> f64 {
        self.n[sigma] as f64 / self.volume()
    }

    pub fn momentum(&self, n: Mode) -> [f64; 3] {
        [self.spacing * n[0] as f64, self.spacing * n[1] as f64, self.spacing * n[2] as f64]
    }
}

pub fn build(l: f64, d: &SpinDensities, p_cutoff: f64) -> Result<MomentumLattice> {
    if !(l > 0.0 && l.is_finite()) {
        return input(format!("box side must be positive, got {l}"));
    }
    let k_f = [d.kf_up(), d.kf_down()];
    let kmax = k_f[0].max(k_f[1]);
    if !(p_cutoff >= kmax) {
        return input(format!("cutoff {p_cutoff} lies below the Fermi momentum {kmax}"));
    }
    let spacing = 2.0 * PI / l;
    let m_cut = shell_threshold(p_cutoff, l);
    let estimate = 4.2 * ((m_cut.max(0) as f64).sqrt() + 1.0).powi(3);
    if estimate > MAX_MODES as f64 {
        return Err(Error::Resource(format!("about {estimate:.0} modes below the cutoff, limit {MAX_MODES}")));
    }
    let m_fermi = [shell_threshold(k_f[0], l), shell_threshold(k_f[1], l)];
    let modes = enumerate_ball(m_cut);
    let fermi_ball = [enumerate_ball(m_fermi[0]), enumerate_ball(m_fermi[1])];
    let n = [fermi_ball[0].len(), fermi_ball[1].len()];
    Ok(MomentumLattice { l, spacing, p_cutoff, densities: *d, k_f, m_fermi, modes, fermi_ball, n })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FfgEnergy {
    /// sum_sigma sum_{k in B_F^sigma} |k|^2.
    pub kinetic: f64,
    pub kinetic_per_volume: f64,
    /// Densities N_sigma / L^3.
    pub lattice_densities: [f64; 2],
    /// kinetic_per_volume + V-hat(0) rho_up rho_dn at the lattice densities.
    pub leading_per_volume: f64,
}

pub fn ffg_energy(lat: &MomentumLattice, v_hat0: f64) -> FfgEnergy {
    let mut acc = KahanSum::new();
    for ball in &lat.fermi_ball {
        for n in ball {
            acc.add(lat.spacing * lat.spacing * norm2(*n) as f64);
        }
    }
    let kinetic = acc.value();
    let kinetic_per_volume = kinetic / lat.volume();
    let rho = [lat.lattice_density(0), lat.lattice_density(1)];
    FfgEnergy { kinetic, kinetic_per_volume, lattice_densities: rho, leading_per_volume: kinetic_per_volume + v_hat0 * rho[0] * rho[1] }
}

/// (3/5) (6 pi^2)^(2/3) (rho_up^(5/3) + rho_dn^(5/3)).
pub fn continuum_kinetic(d: &SpinDensities) -> f64 {
    0.6 * (6.0 * PI * PI).powf(2.0 / 3.0) * (d.rho_up.powf(5.0 / 3.0) + d.rho_down.powf(5.0 / 3.0))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionSum {
    /// (1/L^6) sum over p, r, r'.
    pub raw: f64,
    /// raw / L^3.
    pub per_volume: f64,
    /// Per-volume sum of W(p)^2 N_up N_dn / (2 |p|^2), W = 2 |p|^2 phi-hat.
    pub unblocked_part: f64,
    /// Per-volume Pauli-blocking reduction, unblocked_part - per_volume.
    pub blocking_part: f64,
    pub eps: f64,
    pub p_cutoff: f64,
    /// Transfers with |p| at or below this radius are summed exactly.
    pub exact_radius: f64,
    /// Per-volume bound on the omitted |p| > p_cutoff transfers.
    pub truncation_bound: f64,
    /// Per-volume bound on the series remainder beyond exact_radius.
    pub expansion_bound: f64,
    pub warning: Option<String>,
}

fn check_tables(lat: &MomentumLattice, per: &PeriodicScattering, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return input(format!("eps must be positive, got {eps}"));
    }
    if ((per.l - lat.l) / lat.l).abs() > 1e-12 {
        return input(format!("coefficient table built for L = {}, lattice has L = {}", per.l, lat.l));
    }
    Ok(())
}

/// Number of distinct signed permutations of (x, y, z), x >= y >= z >= 0.
fn orbit_size(x: i64, y: i64, z: i64) -> u64 {
    let perms = if x == y && y == z {
        1
    } else if x == y || y == z {
        3
    } else {
        6
    };
    let signs = [x, y, z].iter().filter(|v| **v != 0).count();
    perms << signs
}

/// Histogram of lambda = m + 2 n.r over r in the ball with r + n outside it.
fn pauli_histogram(n: Mode, m: i64, ball: &[(Mode, i64)], m_fermi: i64) -> Vec<(i64, u64)> {
    let reach = ((m as f64) * (m_fermi.max(0) as f64)).sqrt().floor() as i64 + 1;
    let hi = m + 2 * reach;
    let mut h = vec![0u64; hi as usize + 1];
    for (r, mr) in ball {
        let lam = m + 2 * (n[0] * r[0] + n[1] * r[1] + n[2] * r[2]);
        if mr + lam > m_fermi {
            h[lam as usize] += 1;
        }
    }
    h.iter().enumerate().filter(|(_, c)| **c > 0).map(|(l, c)| (l as i64, *c)).collect()
}

/// sum_{r, r'} u u v v / (c (lambda + lambda') + 2 eps) for one transfer n.
fn blocked_pair_sum(n: Mode, m: i64, balls: &[Vec<(Mode, i64)>; 2], m_fermi: [i64; 2], c: f64, eps: f64) -> f64 {
    let h1 = pauli_histogram(n, m, &balls[0], m_fermi[0]);
    let h2 = pauli_histogram(n, m, &balls[1], m_fermi[1]);
    if h1.is_empty() || h2.is_empty() {
        return 0.0;
    }
    let top = (h1.last().unwrap().0 + h2.last().unwrap().0) as usize;
    let mut conv = vec![0u64; top + 1];
    for (l1, c1) in &h1 {
        for (l2, c2) in &h2 {
            conv[(l1 + l2) as usize] += c1 * c2;
        }
    }
    let mut acc = KahanSum::new();
    for (s, k) in conv.iter().enumerate() {
        if *k > 0 {
            acc.add(*k as f64 / (c * s as f64 + 2.0 * eps));
        }
    }
    acc.value()
}

/// Cubic-invariant moments of w = r - r' over B_up x B_dn, lattice units:
/// [E wx^2, E wx^4, E wx^2 wy^2, E wx^6, E wx^4 wy^2, E wx^2 wy^2 wz^2].
fn pair_moments(b1: &[(Mode, i64)], b2: &[(Mode, i64)]) -> [f64; 6] {
    let sums: Vec<[f64; 6]> = b1
        .par_iter()
        .map(|(r, _)| {
            let mut s = [0.0; 6];
            for (q, _) in b2 {
                let w = [(r[0] - q[0]) as f64, (r[1] - q[1]) as f64, (r[2] - q[2]) as f64];
                let (x2, y2, z2) = (w[0] * w[0], w[1] * w[1], w[2] * w[2]);
                s[0] += x2;
                s[1] += x2 * x2;
                s[2] += x2 * y2;
                s[3] += x2 * x2 * x2;
                s[4] += x2 * x2 * y2;
                s[5] += x2 * y2 * z2;
            }
            s
        })
        .collect();
    let mut tot = [0.0; 6];
    for s in &sums {
        for i in 0..6 {
            tot[i] += s[i];
        }
    }
    let np = (b1.len() * b2.len()) as f64;
    tot.map(|v| v / np)
}

/// Series for the blocking term at an unblocked transfer: returns
/// sum_{j=1..7} (-1)^(j+1) E[x^j], x = (n.w + eps / c) / m.
fn blocking_series(n: Mode, m: i64, mom: &[f64; 6], e: f64) -> f64 {
    let m = m as f64;
    let (a, b, cz) = (n[0] as f64, n[1] as f64, n[2] as f64);
    let (a2, b2, c2) = (a * a, b * b, cz * cz);
    let s4 = a2 * a2 + b2 * b2 + c2 * c2;
    let s22 = a2 * b2 + a2 * c2 + b2 * c2;
    let s6 = a2 * a2 * a2 + b2 * b2 * b2 + c2 * c2 * c2;
    let s42 = a2 * a2 * (b2 + c2) + b2 * b2 * (a2 + c2) + c2 * c2 * (a2 + b2);
    let y2 = mom[0] / m;
    let y4 = (mom[1] * s4 + 6.0 * mom[2] * s22) / m.powi(4);
    let y6 = (mom[3] * s6 + 15.0 * mom[4] * s42 + 90.0 * mom[5] * a2 * b2 * c2) / m.powi(6);
    let ey = [1.0, 0.0, y2, 0.0, y4, 0.0, y6, 0.0];
    let binom = |j: usize, i: usize| -> f64 {
        let mut v = 1.0;
        for k in 0..i {
            v = v * (j - k) as f64 / (k + 1) as f64;
        }
        v
    };
    let mut total = 0.0;
    for j in 1..=7usize {
        let mut ex = 0.0;
        for i in (0..=j).step_by(2) {
            ex += binom(j, i) * e.powi((j - i) as i32) * ey[i];
        }
        total += if j % 2 == 1 { ex } else { -ex };
    }
    total
}

/// The 1/L^6 correction sum, organised by transfer momentum.
///
/// Transfers are grouped into cubic orbits. Up to `exact_radius` the r and
/// r' sums are done exactly through integer histograms of lambda_{p,r}.
/// Beyond it Pauli blocking is inactive and the pair sum is expanded in
/// (p.w + eps) / |p|^2 through seventh order using exact pair moments.
pub fn correction_lattice_sum(lat: &MomentumLattice, per: &PeriodicScattering, eps: f64) -> Result<CorrectionSum> {
    check_tables(lat, per, eps)?;
    let c = lat.spacing * lat.spacing;
    let vol = lat.volume();
    let m_cut = per.m_max as i64;
    let p_cutoff = lat.spacing * (m_cut as f64).sqrt();
    let kl = [(lat.m_fermi[0].max(0) as f64).sqrt(), (lat.m_fermi[1].max(0) as f64).sqrt()];
    let r_exact = 3.0 * (kl[0] + kl[1]) + 1.0;
    let m_exact = (r_exact * r_exact).ceil() as i64;
    let empty = lat.n[0] == 0 || lat.n[1] == 0;
    if empty {
        return Ok(CorrectionSum {
            raw: 0.0,
            per_volume: 0.0,
            unblocked_part: 0.0,
            blocking_part: 0.0,
            eps,
            p_cutoff,
            exact_radius: lat.spacing * r_exact,
            truncation_bound: 0.0,
            expansion_bound: 0.0,
            warning: None,
        });
    }
    let balls: [Vec<(Mode, i64)>; 2] = [0, 1].map(|s| lat.fermi_ball[s].iter().map(|n| (*n, norm2(*n))).collect());
    let mom = pair_moments(&balls[0], &balls[1]);
    let nn = (lat.n[0] * lat.n[1]) as f64;
    let w_max = kl[0] + kl[1];
    let nc = (m_cut as f64).sqrt().floor() as i64;

    let rows: Vec<[f64; 3]> = (0..=nc)
        .into_par_iter()
        .map(|x| {
            let mut free = KahanSum::new();
            let mut block = KahanSum::new();
            let mut remainder = 0.0;
            for y in 0..=x {
                for z in 0..=y {
                    let m = x * x + y * y + z * z;
                    if m == 0 || m > m_cut {
                        continue;
                    }
                    let phi = per.phi[m as usize];
                    let p2 = c * m as f64;
                    let w2 = (2.0 * p2 * phi).powi(2);
                    if w2 == 0.0 {
                        continue;
                    }
                    let mult = orbit_size(x, y, z) as f64;
                    free.add(mult * w2 * nn / (2.0 * p2));
                    let n = [x, y, z];
                    let b = if m <= m_exact {
                        nn / (2.0 * p2) - blocked_pair_sum(n, m, &balls, lat.m_fermi, c, eps)
                    } else {
                        let xm = (w_max * (m as f64).sqrt() + eps / c) / m as f64;
                        remainder += mult * w2 * nn / (2.0 * p2) * xm.powi(8) / (1.0 - xm);
                        nn / (2.0 * p2) * blocking_series(n, m, &mom, eps / p2)
                    };
                    block.add(mult * w2 * b);
                }
            }
            [free.value(), block.value(), remainder]
        })
        .collect();
    let mut free = KahanSum::new();
    let mut block = KahanSum::new();
    let mut remainder = 0.0;
    for r in &rows {
        free.add(r[0]);
        block.add(r[1]);
        remainder += r[2];
    }
    let norm = vol.powi(3);
    let unblocked_part = free.value() / norm;
    let blocking_part = block.value() / norm;
    let per_volume = unblocked_part - blocking_part;

    // envelope |phi-hat| <= C / p^4 fitted on the outer half of the table
    let mut env = 0.0f64;
    let m_lo = (m_cut / 4).max(1);
    for m in m_lo..=m_cut {
        let p2 = c * m as f64;
        env = env.max(per.phi[m as usize].abs() * p2 * p2);
    }
    let x_cut = (w_max * lat.spacing + eps / p_cutoff) / p_cutoff;
    let geometric = if x_cut < 1.0 { 1.0 / (1.0 - x_cut) } else { f64::INFINITY };
    // (2 pi)^-3 int_P^inf 4 pi p^2 (4 C^2 / p^4) / (2 p^2) dp = C^2 / (3 pi^2 P^3)
    let truncation_bound = nn / vol.powi(2) * env * env / (3.0 * PI * PI * p_cutoff.powi(3)) * geometric;
    let expansion_bound = remainder / norm;
    let warning = if truncation_bound > 1e-3 * per_volume.abs() {
        Some(format!("momentum cutoff truncation bound {truncation_bound:.3e} exceeds 1e-3 of the sum"))
    } else {
        None
    };
    Ok(CorrectionSum {
        raw: per_volume * vol,
        per_volume,
        unblocked_part,
        blocking_part,
        eps,
        p_cutoff,
        exact_radius: lat.spacing * r_exact,
        truncation_bound,
        expansion_bound,
        warning,
    })
}

/// The same sum by the plain triple loop over p, r, r' (parallel over p).
/// Cost N_up N_dn per transfer; meant for small lattices and cross-checks.
pub fn correction_lattice_sum_direct(lat: &MomentumLattice, per: &PeriodicScattering, eps: f64) -> Result<f64> {
    check_tables(lat, per, eps)?;
    let c = lat.spacing * lat.spacing;
    let m_cut = per.m_max as i64;
    let transfers = enumerate_ball(m_cut);
    let terms: Vec<f64> = transfers
        .par_iter()
        .map(|p| {
            let m = norm2(*p);
            if m == 0 {
                return 0.0;
            }
            let w = 2.0 * c * m as f64 * per.phi[m as usize];
            let mut acc = KahanSum::new();
            for r in &lat.fermi_ball[0] {
                let rp = [r[0] + p[0], r[1] + p[1], r[2] + p[2]];
                if lat.in_ball(0, rp) {
                    continue;
                }
                let l1 = norm2(rp) - norm2(*r);
                for q in &lat.fermi_ball[1] {
                    let qp = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                    if lat.in_ball(1, qp) {
                        continue;
                    }
                    let l2 = norm2(qp) - norm2(*q);
                    acc.add(1.0 / (c * (l1 + l2) as f64 + 2.0 * eps));
                }
            }
            w * w * acc.value()
        })
        .collect();
    let mut acc = KahanSum::new();
    for t in terms {
        acc.add(t);
    }
    Ok(acc.value() / lat.l.powi(6))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    /// Log-log least squares; needs >= 4 positive points spanning a decade.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 4 {
            return input(format!("scaling fit needs at least 4 points, got {}", points.len()));
        }
        if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
            return Err(Error::Domain("scaling fit needs positive abscissae and values".into()));
        }
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
        if hi / lo < 10.0 * (1.0 - 1e-9) {
            return input(format!("scaling fit spans {:.3} decades, need 1", (hi / lo).log10()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let (slope, intercept, r_squared) = loglog_fit(&xs, &ys);
        Ok(Self { points, slope, intercept, r_squared })
    }
}

/// kappa used for the fac2 exponent 1/3 - kappa.
pub const FAC2_KAPPA: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TIntegralFit {
    pub label: String,
    pub expected_exponent: f64,
    pub fit: ScalingFit,
    pub kappa: Option<f64>,
    pub passes: bool,
}

/// Closed-form t-integrals for one density, as lattice sums.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TIntegrals {
    pub rho: f64,
    pub l: f64,
    pub fac1: f64,
    pub fac2: f64,
    pub fac2_u_gt: f64,
    pub fac2_u_gt_b: f64,
    pub tilde_infinity: f64,
}

/// Radial lattice sum (1/L^3) sum_{m in window} r3(m) f(|k|^2).
fn shell_sum(r3: &[u64], c: f64, vol: f64, lo: usize, hi: usize, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = KahanSum::new();
    for m in lo..=hi.min(r3.len() - 1) {
        if r3[m] > 0 {
            acc.add(r3[m] as f64 * f(c * m as f64));
        }
    }
    acc.value() / vol
}

/// Evaluates the five t-integrals at density d in a box of side l.
///
/// Spin up carries the single-spin windows; the last display couples
/// k_F^up and k_F^dn. Infinite sums run over lattice shells to 16 times
/// the window radius and add the continuum tail beyond.
pub fn t_integrals(d: &SpinDensities, gamma: f64, delta: f64, l: f64) -> Result<TIntegrals> {
    if !(gamma > 0.0 && gamma < 1.0 / 6.0) {
        return input(format!("gamma must lie in (0, 1/6), got {gamma}"));
    }
    if !(delta > 1.0 / 3.0) {
        return input(format!("delta must exceed 1/3, got {delta}"));
    }
    if !(l > 0.0) {
        return input(format!("box side must be positive, got {l}"));
    }
    let rho = d.total();
    if !(d.rho_up > 0.0) {
        return input("spin-up density must be positive");
    }
    let eps = rho.powf(2.0 / 3.0 + delta);
    let (k1, k2) = (d.kf_up(), d.kf_down());
    let window = rho.powf(1.0 / 3.0 - gamma);
    let (p_in, p_out) = (6.0 * window, 3.0 * window);
    let q = (k1 * k1 + k2 * k2).sqrt();
    if !(p_out > q && p_out > k1) {
        return Err(Error::Domain(format!("density {rho} too large: the outer window 3 rho^(1/3-gamma) = {p_out} must exceed {q}")));
    }
    let c = (2.0 * PI / l).powi(2);
    let vol = l.powi(3);
    let m_f = shell_threshold(k1, l);
    let m_in = shell_threshold(p_in, l);
    // first shell with |k| >= p_out, ties counted in the window
    let m_out = ((p_out * p_out / c) * (1.0 - TIE_SLACK)).ceil() as usize;
    let k_tail_l = (16.0 * p_out / c.sqrt()).max(64.0);
    let m_tail = (k_tail_l * k_tail_l).floor() as usize;
    let r3 = shell_counts(m_tail.max(m_in.max(0) as usize));
    let k_tail = (c * (m_tail as f64 + 0.5)).sqrt();
    let two_pi3 = (2.0 * PI).powi(3);

    let fac1 = shell_sum(&r3, c, vol, (m_f + 1) as usize, m_in.max(0) as usize, |k2s| 1.0 / (2.0 * (k2s - k1 * k1) + 2.0 * eps));
    let fac2 = if m_f >= 0 {
        shell_sum(&r3, c, vol, 0, m_f as usize, |k2s| 1.0 / (2.0 * (k1 * k1 - k2s) + 2.0 * eps))
    } else {
        0.0
    };
    let atanh_tail = |qq: f64| ((k_tail + qq) / (k_tail - qq)).ln() / (2.0 * qq);
    let fac2_u_gt = shell_sum(&r3, c, vol, m_out, m_tail, |k2s| 1.0 / (2.0 * k2s * (k2s - k1 * k1)))
        + 4.0 * PI / two_pi3 * 0.5 * atanh_tail(k1);
    let fac2_u_gt_b = shell_sum(&r3, c, vol, m_out, m_tail, |k2s| 1.0 / (2.0 * k2s * k2s * (k2s - k1 * k1)))
        + 4.0 * PI / two_pi3 * 0.5 / (k1 * k1) * (atanh_tail(k1) - 1.0 / k_tail);
    let q2 = q * q;
    let tilde_infinity = shell_sum(&r3, c, vol, m_out, m_tail, |k2s| 1.0 / (k2s * (k2s - q2))) + 4.0 * PI / two_pi3 * atanh_tail(q);
    Ok(TIntegrals { rho, l, fac1, fac2, fac2_u_gt, fac2_u_gt_b, tilde_infinity })
}

/// Fits the rho-scaling of the five t-integrals.
///
/// The family runs over a decade below d (five points, fixed spin ratio)
/// with L scaled as rho^(-1/3), so k_F L stays at its value for (d, l).
pub fn t_integral_suite(d: &SpinDensities, gamma: f64, delta: f64, l: f64) -> Result<Vec<TIntegralFit>> {
    let mut rows = Vec::new();
    for j in 0..5 {
        let s = 10f64.powf(-(j as f64) / 4.0);
        let dj = SpinDensities::new(d.rho_up * s, d.rho_down * s)?;
        rows.push(t_integrals(&dj, gamma, delta, l * s.powf(-1.0 / 3.0))?);
    }
    let specs: [(&str, f64, Option<f64>, fn(&TIntegrals) -> f64); 5] = [
        ("fac1", 1.0 / 3.0 - gamma, None, |t| t.fac1),
        ("fac2", 1.0 / 3.0 - FAC2_KAPPA, Some(FAC2_KAPPA), |t| t.fac2),
        ("fac2u>", -1.0 / 3.0 + gamma, None, |t| t.fac2_u_gt),
        ("fac2u>b", -1.0 + 3.0 * gamma, None, |t| t.fac2_u_gt_b),
        ("tilde-infinity", -1.0 / 3.0 + gamma, None, |t| t.tilde_infinity),
    ];
    specs
        .iter()
        .map(|(label, expected, kappa, get)| {
            let fit = ScalingFit::new(rows.iter().map(|t| (t.rho, get(t))).collect())?;
            let passes = (fit.slope - expected).abs() <= 0.05;
            Ok(TIntegralFit { label: label.to_string(), expected_exponent: *expected, fit, kappa: *kappa, passes })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HeatKernelNorms {
    pub t: f64,
    /// ||zeta_1^t||_1 read off as zeta-hat(0), valid since the kernel is positive.
    pub l1_norm: f64,
    /// The same norm by quadrature of the real-space image sum.
    pub l1_norm_quadrature: f64,
    pub l2_norm: f64,
    /// ||zeta_>^t||_2 over modes |k| >= 3 rho^(1/3 - gamma).
    pub l2_norm_outer: f64,
    /// exp(-(9/2) t rho^(2/3 - 2 gamma)).
    pub decay_factor: f64,
}

/// sum_{n in Z} exp(-a n^2), switching to the Poisson dual for small a.
fn theta(a: f64) -> f64 {
    if a >= 1.0 {
        let mut s = 1.0;
        let mut n = 1.0f64;
        loop {
            let t = (-a * n * n).exp();
            s += 2.0 * t;
            if t < 1e-18 {
                break;
            }
            n += 1.0;
        }
        s
    } else {
        let b = PI * PI / a;
        let mut s = 1.0;
        let mut k = 1.0f64;
        loop {
            let t = (-b * k * k).exp();
            s += 2.0 * t;
            if t < 1e-18 {
                break;
            }
            k += 1.0;
        }
        (PI / a).sqrt() * s
    }
}

/// Periodised one-dimensional heat kernel at x in [0, L].
fn image_sum(x: f64, t: f64, l: f64) -> f64 {
    let reach = ((160.0 * t).sqrt() / l).ceil() as i64 + 1;
    let norm = 1.0 / (4.0 * PI * t).sqrt();
    let mut s = 0.0;
    for n in -reach..=reach {
        let d = x - n as f64 * l;
        s += (-d * d / (4.0 * t)).exp();
    }
    norm * s
}

pub fn heat_kernel_norms(t: f64, l: f64, rho: f64, gamma: f64) -> Result<HeatKernelNorms> {
    if !(t > 0.0 && t.is_finite()) {
        return input(format!("t must be positive, got {t}"));
    }
    if !(l > 0.0 && rho > 0.0) {
        return input("box side and density must be positive");
    }
    let c = (2.0 * PI / l).powi(2);
    let vol = l.powi(3);
    let p = 3.0 * rho.powf(1.0 / 3.0 - gamma);
    let full = theta(2.0 * t * c).powi(3);
    let m_inner = ((p * p / c) * (1.0 - TIE_SLACK)).ceil() as usize;
    let decay = (-2.0 * t * p * p).exp();
    let outer = if decay < 1e-6 {
        // direct shells: the subtraction below would cancel catastrophically
        let m_end = m_inner + ((40.0 / (2.0 * t * c)).ceil() as usize).max(1);
        if m_end > 4_000_000 {
            return Err(Error::Resource(format!("heat-kernel shell sum needs {m_end} shells")));
        }
        let r3 = shell_counts(m_end);
        let mut acc = KahanSum::new();
        for m in m_inner..=m_end {
            acc.add(r3[m] as f64 * (-2.0 * t * c * m as f64).exp());
        }
        acc.value()
    } else {
        let r3 = shell_counts(m_inner);
        let mut acc = KahanSum::new();
        for m in 0..m_inner {
            acc.add(r3[m] as f64 * (-2.0 * t * c * m as f64).exp());
        }
        full - acc.value()
    };
    let panels = ((l / (0.5 * t.sqrt())).ceil() as usize).clamp(1, 100_000);
    let h = l / panels as f64;
    let mut acc = KahanSum::new();
    for i in 0..panels {
        let a = i as f64 * h;
        acc.add(gl_integrate(16, a, a + h, |x| image_sum(x, t, l).abs()));
    }
    Ok(HeatKernelNorms {
        t,
        l1_norm: 1.0,
        l1_norm_quadrature: acc.value().powi(3),
        l2_norm: (full / vol).sqrt(),
        l2_norm_outer: (outer.max(0.0) / vol).sqrt(),
        decay_factor: (-4.5 * t * rho.powf(2.0 / 3.0 - 2.0 * gamma)).exp(),
    })
}

/// Fit of ||zeta_>^t||_2 exp((9/2) t rho^(2/3-2gamma)) against t over [t_lo, 10 t_lo].
pub fn heat_kernel_scaling(l: f64, rho: f64, gamma: f64, t_lo: f64) -> Result<ScalingFit> {
    let mut pts = Vec::new();
    for j in 0..6 {
        let t = t_lo * 10f64.powf(j as f64 / 5.0);
        let h = heat_kernel_norms(t, l, rho, gamma)?;
        pts.push((t, h.l2_norm_outer / h.decay_factor));
    }
    ScalingFit::new(pts)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    /// Coefficient b of the b / L correction.
    pub slope: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub low_confidence: bool,
}

/// Least-squares fit of value = limit + b / L.
///
/// Flags low confidence when the distance to the limit does not shrink
/// monotonically with L.
pub fn extrapolate(values: &[(f64, f64)]) -> Result<Extrapolation> {
    if values.len() < 3 {
        return input(format!("extrapolation needs at least 3 values, got {}", values.len()));
    }
    if values.windows(2).any(|w| !(w[1].0 > w[0].0)) || values[0].0 <= 0.0 {
        return input("box sides must be positive and increasing");
    }
    let n = values.len() as f64;
    let xs: Vec<f64> = values.iter().map(|(l, _)| 1.0 / l).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = values.iter().map(|v| v.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, (_, y)) in xs.iter().zip(values) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    let limit = my - slope * mx;
    let res: Vec<f64> = xs.iter().zip(values).map(|(x, (_, y))| y - limit - slope * x).collect();
    let residual = (res.iter().map(|r| r * r).sum::<f64>() / n).sqrt();
    let scale = my.abs().max(f64::MIN_POSITIVE);
    let gaps: Vec<f64> = values.iter().map(|(_, y)| (y - limit).abs()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12 * scale);
    Ok(Extrapolation { limit, slope, residual, low_confidence: !monotone })
}

/// k_F for a single spin (re-exported for callers building windows).
pub fn kf(rho_sigma: f64) -> f64 {
    fermi_momentum(rho_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::RadialPotential;
    use crate::scattering::{periodize, solve_zero_energy, GridSpec};

    #[test]
    fn unit_spacing_ball_has_nineteen_points() {
        let k = 1.5;
        let rho = k * k * k / (6.0 * PI * PI);
        let d = SpinDensities::new(rho, rho).unwrap();
        let lat = build(2.0 * PI, &d, 3.0).unwrap();
        assert_eq!(lat.n, [19, 19]);
        for n in &lat.fermi_ball[0] {
            assert!(lat.in_ball(0, [-n[0], -n[1], -n[2]]));
        }
        for n in &lat.modes {
            assert_eq!(lat.u_hat(0, *n) * lat.v_hat(0, *n), 0.0);
            assert_eq!(lat.u_hat(0, *n) + lat.v_hat(0, *n), 1.0);
        }
    }

    #[test]
    fn ties_are_inside() {
        // k_F = 1 with spacing 1: the six unit vectors sit exactly on the sphere
        let rho = 1.0 / (6.0 * PI * PI);
        let lat = build(2.0 * PI, &SpinDensities::new(rho, 0.0).unwrap(), 2.0).unwrap();
        assert_eq!(lat.n, [7, 0]);
    }

    #[test]
    fn shell_counts_match_enumeration() {
        let r3 = shell_counts(60);
        let all = enumerate_ball(60);
        for m in 0..=60 {
            let direct = all.iter().filter(|n| norm2(**n) == m as i64).count() as u64;
            assert_eq!(r3[m], direct, "m = {m}");
        }
    }

    #[test]
    fn orbit_sizes_cover_the_cube() {
        let mut total = 0;
        for x in 0..=5i64 {
            for y in 0..=x {
                for z in 0..=y {
                    total += orbit_size(x, y, z);
                }
            }
        }
        assert_eq!(total, 11 * 11 * 11);
    }

    #[test]
    fn theta_branches_agree() {
        for a in [0.3, 0.999, 1.0, 1.7] {
            let direct: f64 = (-400..=400).map(|n: i64| (-a * (n * n) as f64).exp()).sum();
            assert!((theta(a) - direct).abs() < 1e-13 * direct, "a = {a}");
        }
    }

    #[test]
    fn fast_and_direct_correction_sums_agree() {
        let sol = solve_zero_energy(&RadialPotential::square_well(2.0, 1.0).unwrap(), &GridSpec::default()).unwrap();
        let l = 12.0;
        let k = 2.0 * (2.0 * PI / l);
        let rho = k.powi(3) / (6.0 * PI * PI);
        let d = SpinDensities::new(rho, rho).unwrap();
        let lat = build(l, &d, k).unwrap();
        let per = periodize(&sol, l, 2.0 * rho, 0.1, 14.0 * 2.0 * PI / l).unwrap();
        let eps = 0.05;
        let fast = correction_lattice_sum(&lat, &per, eps).unwrap();
        let direct = correction_lattice_sum_direct(&lat, &per, eps).unwrap();
        let gap = (fast.raw - direct).abs() / direct;
        assert!(gap < 1e-6, "fast {} direct {} gap {gap:e}", fast.raw, direct);
        assert!(fast.expansion_bound < 1e-6 * fast.per_volume);
    }

    #[test]
    fn extrapolation_is_exact_on_the_model() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0].iter().map(|l| (*l, 1.25 - 3.0 / l)).collect();
        let e = extrapolate(&pts).unwrap();
        assert!((e.limit - 1.25).abs() < 1e-12);
        assert!(!e.low_confidence);
    }
}
