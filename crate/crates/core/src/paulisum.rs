//! The Pauli-blocked correction integral
//!
//!   G(k_up, k_dn; eps) = 1/(8 pi^7) int dp int_{|r|<=k_up} dr int_{|r'|<=k_dn} dr'
//!       [ 1/(2|p|^2) - 1{|r+p|>k_up} 1{|r'-p|>k_dn} / (lambda_{p,r} + lambda_{-p,r'} + 2 eps) ]
//!
//! and the correlation constant built from the scattering profile.
//!
//! (r, r') is sampled by stratified Monte Carlo. For fixed (r, r') the
//! p-integral is done in spherical coordinates p = s n: along each ray the
//! Pauli indicators reduce to s > s_b(n), and the radial integral has a
//! closed form, so only the two angular variables are integrated numerically.
//! The angular grid is split where s_b(n) has a kink.

use crate::error::{input, Error, Result};
use crate::hyformula::{self, SpinDensities};
use crate::quad::{self, Chebyshev, KahanSum};
use crate::scattering::ScatteringSolution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Samples drawn per work unit (one random stream each).
const UNIT: usize = 256;

/// Angular Gauss-Legendre orders for the p-direction integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularRule {
    /// Nodes in cos(theta) on [-1, 1].
    pub polar: usize,
    /// Nodes per azimuthal panel on [0, pi].
    pub azimuth: usize,
}

impl Default for AngularRule {
    fn default() -> Self {
        Self { polar: 24, azimuth: 12 }
    }
}

/// Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub samples: usize,
    pub seed: u64,
    /// Equal-volume radial shells per Fermi ball; strata = shells^2.
    pub shells: usize,
    pub angular: AngularRule,
    /// Finite radial cutoff for the p-integral, with the analytic tail added.
    /// `None` uses the closed-form limit P -> infinity along each ray.
    pub p_max: Option<f64>,
}

impl Default for McParams {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0x5eed, shells: 8, angular: AngularRule::default(), p_max: None }
    }
}

/// Per-stratum contribution to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumValue {
    pub shell_up: usize,
    pub shell_down: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub breakdown: Option<Vec<StratumValue>>,
}

impl MCEstimate {
    fn zero(mc: &McParams) -> Self {
        Self { value: 0.0, std_error: 0.0, n_samples: mc.samples, seed: mc.seed, breakdown: None }
    }

    fn scaled(mut self, f: f64) -> Self {
        self.value *= f;
        self.std_error *= f.abs();
        if let Some(b) = self.breakdown.as_mut() {
            for s in b {
                s.mean *= f;
                s.std_error *= f.abs();
            }
        }
        self
    }
}

/// Geometry of one sampled pair (r, r'), expressed in the frame where r is
/// along the polar axis and r' lies in the (1, 3) half plane.
#[derive(Debug, Clone, Copy)]
pub struct PairFrame {
    pub k_up: f64,
    pub k_down: f64,
    /// |r|
    pub r: f64,
    /// r' components along the polar axis and perpendicular to it (>= 0).
    pub rp_par: f64,
    pub rp_perp: f64,
}

impl PairFrame {
    pub fn new(k_up: f64, k_down: f64, r: [f64; 3], rp: [f64; 3]) -> Self {
        let rn = norm(r);
        let e3 = if rn > 0.0 { [r[0] / rn, r[1] / rn, r[2] / rn] } else { [0.0, 0.0, 1.0] };
        let rp_par = dot(rp, e3);
        let perp = [rp[0] - rp_par * e3[0], rp[1] - rp_par * e3[1], rp[2] - rp_par * e3[2]];
        Self { k_up, k_down, r: rn, rp_par, rp_perp: norm(perp) }
    }

    pub fn rp_norm2(&self) -> f64 {
        self.rp_par * self.rp_par + self.rp_perp * self.rp_perp
    }

    /// |r - r'|^2
    pub fn w2(&self) -> f64 {
        let d = self.r - self.rp_par;
        d * d + self.rp_perp * self.rp_perp
    }

    /// Exit radius from the up ball along direction with n.r = a.
    fn s_up(&self, a: f64) -> f64 {
        let m = (self.k_up * self.k_up - self.r * self.r).max(0.0);
        let root = (a * a + m).sqrt();
        if a > 0.0 {
            if root + a > 0.0 {
                m / (root + a)
            } else {
                0.0
            }
        } else {
            root - a
        }
    }

    /// Exit radius from the down ball along -n, with n.r' = b.
    fn s_down(&self, b: f64) -> f64 {
        let m = (self.k_down * self.k_down - self.rp_norm2()).max(0.0);
        let root = (b * b + m).sqrt();
        if b < 0.0 {
            if root - b > 0.0 {
                m / (root - b)
            } else {
                0.0
            }
        } else {
            root + b
        }
    }

    /// Integrate `f(s_b, c)` over the unit sphere of directions n, where
    /// s_b is the Pauli threshold along n and c = n.(r - r').
    pub fn sphere_integral<F: FnMut(f64, f64) -> f64>(&self, rule: &RuleNodes, mut f: F) -> f64 {
        let mut total = 0.0;
        for (&u, &wu) in rule.polar.0.iter().zip(&rule.polar.1) {
            let st = (1.0 - u * u).max(0.0).sqrt();
            let a = self.r * u;
            let s1 = self.s_up(a);
            let b0 = self.rp_par * u;
            let b1 = self.rp_perp * st;
            // b(phi) = b0 + b1 cos(phi) is decreasing on [0, pi]; s_down is
            // increasing in b, so the kink sits where b(phi) = b_star.
            let mut split = None;
            if s1 > 0.0 && b1 > 0.0 {
                let b_star = (s1 * s1 + self.rp_norm2() - self.k_down * self.k_down) / (2.0 * s1);
                let cp = (b_star - b0) / b1;
                if cp > -1.0 && cp < 1.0 {
                    split = Some(cp.acos());
                }
            }
            let mut ray = |phi: f64| {
                let b = b0 + b1 * phi.cos();
                let sb = s1.max(self.s_down(b));
                f(sb, a - b)
            };
            let inner = match split {
                Some(ps) => panel(&rule.azimuth, 0.0, ps, &mut ray) + panel(&rule.azimuth, ps, PI, &mut ray),
                None => panel(&rule.azimuth, 0.0, PI, &mut ray),
            };
            total += wu * inner;
        }
        2.0 * total
    }
}

fn panel<F: FnMut(f64) -> f64>(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, f: &mut F) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mut s = 0.0;
    for (x, w) in rule.0.iter().zip(&rule.1) {
        s += w * f(c + h * x);
    }
    s * h
}

/// Gauss-Legendre nodes for an [`AngularRule`].
#[derive(Debug, Clone)]
pub struct RuleNodes {
    pub polar: (Vec<f64>, Vec<f64>),
    pub azimuth: (Vec<f64>, Vec<f64>),
}

impl RuleNodes {
    pub fn new(rule: AngularRule) -> Result<Self> {
        if rule.polar < 2 || rule.azimuth < 2 || rule.polar > 512 || rule.azimuth > 512 {
            return input(format!("angular orders must lie in [2, 512], got {rule:?}"));
        }
        Ok(Self { polar: quad::gauss_legendre(rule.polar), azimuth: quad::gauss_legendre(rule.azimuth) })
    }
}

fn norm(v: [f64; 3]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// int_s^inf dt / (t^2 + c t + eps), written with y = s + c/2 >= 0.
pub fn resolvent_tail(s: f64, c: f64, eps: f64) -> f64 {
    let y = s + 0.5 * c;
    let d = eps - 0.25 * c * c;
    if d > 0.0 {
        let q = d.sqrt();
        q.atan2(y) / q
    } else if d < 0.0 {
        let q = (-d).sqrt();
        (q / y).atanh() / q
    } else {
        1.0 / y
    }
}

/// Radial integral along one ray, p = s n, from 0 to infinity:
///   int_0^inf ds [1/2 - 1{s > s_b} s^2 / (2 Q(s))],  Q = s^2 + c s + eps.
/// The logarithmic c ln(P) growth integrates to zero over directions and
/// is replaced by c ln(kappa2) / 4.
pub fn ray_integral(sb: f64, c: f64, eps: f64, kappa2: f64) -> f64 {
    let q = (sb * sb + c * sb + eps).max(f64::MIN_POSITIVE);
    0.5 * sb - 0.25 * c * (q / kappa2).ln() + 0.5 * (eps - 0.5 * c * c) * resolvent_tail(sb, c, eps)
}

/// The same radial integral truncated at s = p_max (requires p_max >= s_b).
pub fn ray_integral_truncated(sb: f64, c: f64, eps: f64, p_max: f64) -> f64 {
    let q = (sb * sb + c * sb + eps).max(f64::MIN_POSITIVE);
    let qp = p_max * p_max + c * p_max + eps;
    0.5 * sb + 0.25 * c * (qp / q).ln()
        + 0.5 * (eps - 0.5 * c * c) * (resolvent_tail(sb, c, eps) - resolvent_tail(p_max, c, eps))
}

/// Directional integral J(r, r') = int dOmega int_0^inf ds s^2 [...] of the
/// subtracted integrand for one sampled pair.
pub fn pair_integral(frame: &PairFrame, eps: f64, rule: &RuleNodes, p_max: Option<f64>) -> f64 {
    let kappa2 = frame.k_up.max(frame.k_down).powi(2).max(f64::MIN_POSITIVE);
    match p_max {
        None => frame.sphere_integral(rule, |sb, c| ray_integral(sb, c, eps, kappa2)),
        Some(p) => {
            let body = frame.sphere_integral(rule, |sb, c| ray_integral_truncated(sb, c, eps, p));
            body + 2.0 * PI * (eps - frame.w2() / 3.0) / p
        }
    }
}

/// Stratified sampling of (r, r') uniform over the two balls. Returns the
/// sample mean of `f` with its standard error and per-stratum breakdown.
pub fn stratified_mean<F>(k_up: f64, k_down: f64, mc: &McParams, f: F) -> Result<MCEstimate>
where
    F: Fn(&PairFrame) -> f64 + Sync,
{
    let m = mc.shells;
    if m == 0 {
        return input("need at least one radial shell per ball");
    }
    let strata = m * m;
    if mc.samples < 2 * strata {
        return input(format!("need at least {} samples for {strata} strata", 2 * strata));
    }
    // (stratum, first sample, count) per work unit
    let mut units = Vec::new();
    for s in 0..strata {
        let n_s = mc.samples / strata + usize::from(s < mc.samples % strata);
        let mut start = 0;
        while start < n_s {
            let len = UNIT.min(n_s - start);
            units.push((s, len));
            start += len;
        }
    }
    let partial: Vec<(usize, f64, f64, usize)> = units
        .par_iter()
        .enumerate()
        .map(|(uid, &(s, len))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(uid as u64);
            let (i, j) = (s / m, s % m);
            let mut sum = KahanSum::new();
            let mut sq = KahanSum::new();
            for _ in 0..len {
                let r = shell_point(&mut rng, k_up, i, m);
                let rp = shell_point(&mut rng, k_down, j, m);
                let v = f(&PairFrame::new(k_up, k_down, r, rp));
                sum.add(v);
                sq.add(v * v);
            }
            (s, sum.value(), sq.value(), len)
        })
        .collect();
    let mut sums = vec![(KahanSum::new(), KahanSum::new(), 0usize); strata];
    for (s, a, b, n) in partial {
        sums[s].0.add(a);
        sums[s].1.add(b);
        sums[s].2 += n;
    }
    let mut mean = KahanSum::new();
    let mut var = 0.0;
    let mut breakdown = Vec::with_capacity(strata);
    for (s, (a, b, n)) in sums.iter().enumerate() {
        let nf = *n as f64;
        let mu = a.value() / nf;
        let v = ((b.value() - nf * mu * mu) / (nf - 1.0)).max(0.0);
        mean.add(mu / strata as f64);
        var += v / nf / (strata * strata) as f64;
        breakdown.push(StratumValue { shell_up: s / m, shell_down: s % m, mean: mu, std_error: (v / nf).sqrt(), n: *n });
    }
    if !mean.value().is_finite() {
        return Err(Error::Numerical("non-finite sample encountered in Monte Carlo average".into()));
    }
    Ok(MCEstimate {
        value: mean.value(),
        std_error: var.sqrt(),
        n_samples: mc.samples,
        seed: mc.seed,
        breakdown: Some(breakdown),
    })
}

fn shell_point(rng: &mut ChaCha8Rng, k: f64, shell: usize, shells: usize) -> [f64; 3] {
    let t: f64 = rng.random();
    let rad = k * ((shell as f64 + t) / shells as f64).cbrt();
    let u: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let ph: f64 = 2.0 * PI * rng.random::<f64>();
    let st = (1.0 - u * u).max(0.0).sqrt();
    [rad * st * ph.cos(), rad * st * ph.sin(), rad * u]
}

fn ball_volume(k: f64) -> f64 {
    4.0 * PI * k.powi(3) / 3.0
}

fn check_momenta(k_up: f64, k_down: f64, eps: f64) -> Result<()> {
    if !(k_up >= 0.0 && k_down >= 0.0 && k_up.is_finite() && k_down.is_finite()) {
        return input(format!("Fermi momenta must be finite and >= 0, got ({k_up}, {k_down})"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return input(format!("eps must be finite and >= 0, got {eps}"));
    }
    Ok(())
}

/// Monte Carlo estimate of G(k_up, k_down; eps).
pub fn pauli_blocked_integral(k_up: f64, k_down: f64, eps: f64, mc: &McParams) -> Result<MCEstimate> {
    check_momenta(k_up, k_down, eps)?;
    if k_up == 0.0 || k_down == 0.0 {
        return Ok(MCEstimate::zero(mc));
    }
    if let Some(p) = mc.p_max {
        if !(p >= 2.0 * k_up.max(k_down)) {
            return input(format!("p_max = {p} must be at least twice the larger Fermi momentum"));
        }
    }
    let rule = RuleNodes::new(mc.angular)?;
    let est = stratified_mean(k_up, k_down, mc, |fr| pair_integral(fr, eps, &rule, mc.p_max))?;
    Ok(est.scaled(ball_volume(k_up) * ball_volume(k_down) / (8.0 * PI.powi(7))))
}

/// Direction-averaged subtracted p-integrand at radius s for a fixed pair:
/// int dOmega [1/(2 s^2) - 1{s > s_b} / (2 Q)].
pub fn angular_profile(frame: &PairFrame, eps: f64, rule: &RuleNodes, s: f64) -> f64 {
    frame.sphere_integral(rule, |sb, c| {
        let q = s * s + c * s + eps;
        if s > sb {
            (c * s + eps) / (2.0 * s * s * q)
        } else {
            0.5 / (s * s)
        }
    })
}

/// Log-log slope of |angular_profile| over s in [s_lo, s_hi] (geometric grid).
pub fn tail_exponent(frame: &PairFrame, eps: f64, rule: &RuleNodes, s_lo: f64, s_hi: f64, n: usize) -> Result<f64> {
    if !(s_lo > 2.0 * frame.k_up.max(frame.k_down) && s_hi > s_lo && n >= 2) {
        return input("tail fit needs 2 max(k) < s_lo < s_hi and at least two points");
    }
    let ss: Vec<f64> = (0..n).map(|i| s_lo * (s_hi / s_lo).powf(i as f64 / (n - 1) as f64)).collect();
    let vs: Vec<f64> = ss.iter().map(|&s| angular_profile(frame, eps, rule, s).abs()).collect();
    if vs.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("profile vanishes; tail exponent undefined".into()));
    }
    Ok(quad::loglog_fit(&ss, &vs).0)
}

/// 2 pi - int dOmega s^2 / (2 Q(s)) for direction-independent blocking,
/// as a function of s and |w| = |r - r'|.
pub fn unblocked_angular_kernel(s: f64, w: f64, eps: f64) -> f64 {
    let e = eps / (s * s);
    let x = w / s;
    if x == 0.0 {
        return 2.0 * PI * e / (1.0 + e);
    }
    let z = x / (1.0 + e);
    // atanh(z) - z without cancellation
    let excess = if z < 0.1 {
        let z2 = z * z;
        let mut term = z * z2;
        let mut s = 0.0;
        let mut k = 3.0;
        while term > 1e-18 * z * z2 {
            s += term / k;
            term *= z2;
            k += 2.0;
        }
        s
    } else {
        z.atanh() - z
    };
    2.0 * PI * (e / (1.0 + e) - excess / x)
}

/// Everything the correlation constant needs from the scattering profile.
struct WeightedKernel {
    eps: f64,
    s_cut: f64,
    weight: Chebyshev,
    cumulative: Chebyshev,
    tail_table: Chebyshev,
    s_nodes: (Vec<f64>, Vec<f64>),
}

impl WeightedKernel {
    /// `w2(s)` is the radial weight; `far_limit` is its value as s -> infinity
    /// (used for the analytic remainder beyond the tabulated range).
    fn new<F: Fn(f64) -> f64>(
        w2: F,
        far_limit: f64,
        k_sum: f64,
        s_cut: f64,
        s_end: f64,
        panel_width: f64,
        eps: f64,
    ) -> Result<Self> {
        let weight = Chebyshev::fit(0.0, s_cut, 64, &w2).truncated(1e-15);
        if weight.coefficients().len() >= 60 {
            return Err(Error::Numerical(format!(
                "radial weight not resolved on [0, {s_cut}]; interaction range too large for this density"
            )));
        }
        let cumulative = weight.integral();
        let n_pan = ((s_end - s_cut) / panel_width).ceil().max(1.0) as usize;
        let h = (s_end - s_cut) / n_pan as f64;
        let (x8, w8) = quad::gl_rule(8);
        let mut ts = Vec::with_capacity(8 * n_pan);
        let mut tw = Vec::with_capacity(8 * n_pan);
        for i in 0..n_pan {
            let a = s_cut + h * i as f64;
            for (x, w) in x8.iter().zip(w8) {
                let s = a + 0.5 * h * (x + 1.0);
                ts.push(s);
                tw.push(0.5 * h * w * w2(s));
            }
        }
        let tail = |w: f64| {
            let mut acc = KahanSum::new();
            for (s, ww) in ts.iter().zip(&tw) {
                acc.add(ww * unblocked_angular_kernel(*s, w, eps));
            }
            acc.add(far_limit * 2.0 * PI * (eps - w * w / 3.0) / s_end);
            acc.value()
        };
        let tail_table = Chebyshev::fit(0.0, k_sum.max(f64::MIN_POSITIVE), 24, tail);
        Ok(Self { eps, s_cut, weight, cumulative, tail_table, s_nodes: quad::gauss_legendre(24) })
    }

    /// int_0^{s_cut} ds w2(s) [1/2 - 1{s>s_b} s^2/(2Q)] along one ray.
    fn ray(&self, sb: f64, c: f64) -> f64 {
        let eps = self.eps;
        let sc = self.s_cut;
        let wb = self.weight.eval(sb);
        let qb = (sb * sb + c * sb + eps).max(f64::MIN_POSITIVE);
        let qc = sc * sc + c * sc + eps;
        let closed = 0.5 * c * (qc / qb).ln()
            + (eps - 0.5 * c * c) * (resolvent_tail(sb, c, eps) - resolvent_tail(sc, c, eps));
        let h = 0.5 * (sc - sb);
        let mid = 0.5 * (sc + sb);
        let mut rest = 0.0;
        for (x, w) in self.s_nodes.0.iter().zip(&self.s_nodes.1) {
            let s = mid + h * x;
            let q = s * s + c * s + eps;
            rest += w * (self.weight.eval(s) - wb) * (c * s + eps) / q;
        }
        0.5 * self.cumulative.eval(sb) + 0.5 * h * rest + 0.5 * wb * closed
    }

    fn pair(&self, frame: &PairFrame, rule: &RuleNodes) -> f64 {
        frame.sphere_integral(rule, |sb, c| self.ray(sb, c)) + self.tail_table.eval(frame.w2().sqrt())
    }
}

/// Result of [`corr_constant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrEstimate {
    /// The correlation constant.
    pub value: f64,
    pub std_error: f64,
    /// 8 pi a rho_up rho_dn + a^2 rho_up^(7/3) F(rho_dn / rho_up).
    pub huang_yang: f64,
    /// value - huang_yang.
    pub deficit: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// int V (1 - phi^2) - 2 int |grad phi|^2, which equals 8 pi a.
    pub energy_identity: f64,
}

fn radial_cutoffs(sol: &ScatteringSolution, kmax: f64, extra: f64) -> (f64, f64, f64) {
    let range = sol.support_radius();
    let s_cut = (2.5 * kmax).max(extra);
    let s_end = (64.0 * s_cut).max(400.0 / range);
    let width = (0.25 * PI / range).min(s_end - s_cut);
    (s_cut, s_end, width)
}

/// rho_up rho_dn int V(1 - phi^2) minus the Pauli-blocked second-order term
/// built with the weight (2 |p|^2 phi-hat(p))^2 = (V f)-hat(p)^2.
///
/// The sampled quantity is the difference to the point-interaction weight
/// (8 pi a)^2, whose exact mean at eps = 0 is a^2 rho_up^(7/3) F.
pub fn corr_constant(sol: &ScatteringSolution, d: &SpinDensities, eps: f64, mc: &McParams) -> Result<CorrEstimate> {
    let (k1, k2) = (d.kf_up(), d.kf_down());
    check_momenta(k1, k2, eps)?;
    let a = sol.a;
    let w0 = 8.0 * PI * a;
    let identity = sol.integral_v_one_minus_phi2() - 2.0 * sol.integral_grad_phi2();
    let hy = 8.0 * PI * a * d.rho_up * d.rho_down + hyformula::third_order(d, a)?;
    if d.rho_up == 0.0 || d.rho_down == 0.0 {
        return Ok(CorrEstimate {
            value: 0.0,
            std_error: 0.0,
            huang_yang: hy,
            deficit: -hy,
            n_samples: mc.samples,
            seed: mc.seed,
            energy_identity: identity,
        });
    }
    let (s_cut, s_end, width) = radial_cutoffs(sol, k1.max(k2), 0.0);
    let offset = sol.vf_hat(0.0) - w0;
    let dw2 = |s: f64| {
        let dw = sol.vf_hat_shift(s) + offset;
        dw * (dw + 2.0 * w0)
    };
    let kern = WeightedKernel::new(dw2, -w0 * w0, k1 + k2, s_cut, s_end, width, eps)?;
    let rule = RuleNodes::new(mc.angular)?;
    let kappa2 = k1.max(k2).powi(2);
    let est = stratified_mean(k1, k2, mc, |fr| {
        let mut v = kern.pair(fr, &rule);
        if eps > 0.0 {
            v += w0 * w0
                * fr.sphere_integral(&rule, |sb, c| ray_integral(sb, c, eps, kappa2) - ray_integral(sb, c, 0.0, kappa2));
        }
        v
    })?;
    let pref = ball_volume(k1) * ball_volume(k2) / (2.0 * PI).powi(9);
    let rr = d.rho_up * d.rho_down;
    let deficit = rr * (identity - w0) + pref * est.value;
    Ok(CorrEstimate {
        value: hy + deficit,
        std_error: pref * est.std_error,
        huang_yang: hy,
        deficit,
        n_samples: mc.samples,
        seed: mc.seed,
        energy_identity: identity,
    })
}

/// The blocked second-order term alone,
/// rho_up rho_dn int V (1 - phi^2) - corr_constant, with its standard error.
pub fn blocked_second_order(sol: &ScatteringSolution, d: &SpinDensities, eps: f64, mc: &McParams) -> Result<(f64, f64)> {
    let c = corr_constant(sol, d, eps, mc)?;
    Ok((d.rho_up * d.rho_down * sol.integral_v_one_minus_phi2() - c.value, c.std_error))
}

/// The p-domain split of the blocked second-order term at |p| = rho^(1/3 - gamma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSplit {
    pub p_split: f64,
    /// -(2 pi)^-9 int_{|p| <= p_split} (V f)-hat^2 u u v v / (lambda + lambda + 2 eps)
    pub inner: f64,
    pub inner_std_error: f64,
    /// The same over |p| >= p_split.
    pub outer: f64,
    pub outer_std_error: f64,
    /// The whole p-range evaluated without splitting, on the same samples.
    pub full: f64,
    pub full_std_error: f64,
    /// -(8 pi a)^2 rho_up rho_dn (2 pi)^-3 int_{|p| <= p_split} dp / (2 |p|^2)
    pub counterterm_inner: f64,
    /// The opposite counterterm produced by the outer-region expansion.
    pub counterterm_outer: f64,
    /// -2 rho_up rho_dn int |grad phi|^2 + counterterm_outer
    pub outer_model: f64,
    /// a^2 rho_up^(7/3) F + counterterm_inner
    pub inner_model: f64,
}

/// Evaluate the inner/outer split together with its counterterms.
pub fn domain_split_report(
    sol: &ScatteringSolution,
    d: &SpinDensities,
    eps: f64,
    gamma: f64,
    mc: &McParams,
) -> Result<DomainSplit> {
    if !(gamma > 0.0 && gamma < 1.0 / 6.0) {
        return input(format!("gamma must lie in (0, 1/6), got {gamma}"));
    }
    let (k1, k2) = (d.kf_up(), d.kf_down());
    check_momenta(k1, k2, eps)?;
    if d.rho_up == 0.0 || d.rho_down == 0.0 {
        return input("domain split needs both spin densities positive");
    }
    let rho = d.total();
    let p0 = rho.powf(1.0 / 3.0 - gamma);
    let (s_cut, s_end, width) = radial_cutoffs(sol, k1.max(k2), 1.25 * p0);
    let w2 = |s: f64| sol.vf_hat(s).powi(2);
    let weight = Chebyshev::fit(0.0, s_cut, 64, w2).truncated(1e-15);
    if weight.coefficients().len() >= 60 {
        return Err(Error::Numerical("radial weight not resolved below the split radius".into()));
    }
    let cumulative = weight.integral();
    // unsubtracted outer tail: int_{s_cut}^inf W^2 (2 pi - K(s, |w|)) ds
    let n_pan = ((s_end - s_cut) / width).ceil().max(1.0) as usize;
    let h = (s_end - s_cut) / n_pan as f64;
    let (x8, g8) = quad::gl_rule(8);
    let mut ts = Vec::new();
    let mut tw = Vec::new();
    for i in 0..n_pan {
        let a0 = s_cut + h * i as f64;
        for (x, w) in x8.iter().zip(g8) {
            let s = a0 + 0.5 * h * (x + 1.0);
            ts.push(s);
            tw.push(0.5 * h * w * w2(s));
        }
    }
    let tail_out = Chebyshev::fit(0.0, k1 + k2, 24, |w| {
        let mut acc = KahanSum::new();
        for (s, ww) in ts.iter().zip(&tw) {
            acc.add(ww * (2.0 * PI - unblocked_angular_kernel(*s, w, eps)));
        }
        acc.value()
    });
    let nodes = quad::gauss_legendre(24);
    // int_{lo}^{hi} W^2 s^2 / (2 Q) ds, anchored at lo for the subtraction
    let piece = |lo: f64, hi: f64, c: f64| -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let wl = weight.eval(lo);
        let ql = (lo * lo + c * lo + eps).max(f64::MIN_POSITIVE);
        let qh = hi * hi + c * hi + eps;
        let closed =
            0.5 * c * (qh / ql).ln() + (eps - 0.5 * c * c) * (resolvent_tail(lo, c, eps) - resolvent_tail(hi, c, eps));
        let hh = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut rest = 0.0;
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            let s = mid + hh * x;
            rest += w * (weight.eval(s) - wl) * (c * s + eps) / (s * s + c * s + eps);
        }
        0.5 * (cumulative.eval(hi) - cumulative.eval(lo)) - 0.5 * hh * rest - 0.5 * wl * closed
    };
    let rule = RuleNodes::new(mc.angular)?;
    let pref = ball_volume(k1) * ball_volume(k2) / (2.0 * PI).powi(9);
    let run = |which: u8| {
        stratified_mean(k1, k2, mc, |fr| {
            let tail = tail_out.eval(fr.w2().sqrt());
            match which {
                0 => fr.sphere_integral(&rule, |sb, c| if sb < p0 { piece(sb, p0, c) } else { 0.0 }),
                1 => fr.sphere_integral(&rule, |sb, c| piece(sb.max(p0), s_cut, c)) + tail,
                _ => fr.sphere_integral(&rule, |sb, c| piece(sb, s_cut, c)) + tail,
            }
        })
    };
    let (inner, outer, full) = (run(0)?, run(1)?, run(2)?);
    let rr = d.rho_up * d.rho_down;
    let w0 = 8.0 * PI * sol.a;
    let counterterm_inner = -w0 * w0 * rr / (2.0 * PI).powi(3) * 2.0 * PI * p0;
    // the outer counterterm as a radial quadrature of the same constant
    let counterterm_outer =
        w0 * w0 * rr / (2.0 * PI).powi(3) * quad::gl_integrate(8, 0.0, p0, |p| 4.0 * PI * p * p / (2.0 * p * p));
    Ok(DomainSplit {
        p_split: p0,
        inner: -pref * inner.value,
        inner_std_error: pref * inner.std_error,
        outer: -pref * outer.value,
        outer_std_error: pref * outer.std_error,
        full: -pref * full.value,
        full_std_error: pref * full.std_error,
        counterterm_inner,
        counterterm_outer,
        outer_model: -2.0 * rr * sol.integral_grad_phi2() + counterterm_outer,
        inner_model: hyformula::third_order(d, sol.a)? + counterterm_inner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k1: f64, k2: f64, r: [f64; 3], rp: [f64; 3]) -> PairFrame {
        PairFrame::new(k1, k2, r, rp)
    }

    #[test]
    fn origin_pair_has_closed_form() {
        let rule = RuleNodes::new(AngularRule::default()).unwrap();
        let f = frame(1.3, 0.7, [0.0; 3], [0.0; 3]);
        let j = pair_integral(&f, 0.0, &rule, None);
        assert!((j - 2.0 * PI * 1.3).abs() < 1e-12, "{j}");
    }

    #[test]
    fn resolvent_tail_matches_quadrature() {
        for (s, c, e) in [(0.5, 0.3, 0.2), (0.7, -0.6, 0.01), (1.0, 1.0, 0.25), (0.2, 0.4, 0.0)] {
            let exact = quad::adaptive(|t: f64| {
                let u = s + t / (1.0 - t);
                1.0 / ((u * u + c * u + e) * (1.0 - t).powi(2))
            }, &[0.0, 0.5, 1.0], 1e-13, 0.0, 5000);
            assert!((resolvent_tail(s, c, e) - exact.value).abs() < 1e-10 * exact.value, "{s} {c} {e}");
        }
    }

    #[test]
    fn truncated_ray_converges_to_limit_after_angular_average() {
        let rule = RuleNodes::new(AngularRule { polar: 32, azimuth: 24 }).unwrap();
        let f = frame(1.0, 0.8, [0.3, -0.2, 0.5], [0.1, 0.4, -0.3]);
        let j = pair_integral(&f, 0.05, &rule, None);
        let mut prev = f64::INFINITY;
        for p in [10.0, 20.0, 40.0] {
            let jp = pair_integral(&f, 0.05, &rule, Some(p));
            let gap = (jp - j).abs();
            assert!(gap < 4.0 / (p * p) && gap < prev, "P = {p}: {gap}");
            prev = gap;
        }
    }

    #[test]
    fn unblocked_kernel_matches_direct_angle_average() {
        for (s, w, e) in [(3.0, 1.2, 0.1), (50.0, 1.0, 0.0), (2.0, 0.0, 0.3)] {
            let direct = 2.0 * PI
                - quad::gl_integrate(32, -1.0, 1.0, |mu| PI * s * s / (s * s + s * w * mu + e));
            assert!((unblocked_angular_kernel(s, w, e) - direct).abs() < 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn empty_ball_gives_zero() {
        let mc = McParams { samples: 256, ..Default::default() };
        assert_eq!(pauli_blocked_integral(1.0, 0.0, 0.0, &mc).unwrap().value, 0.0);
        assert!(pauli_blocked_integral(-1.0, 1.0, 0.0, &mc).is_err());
    }
}
