//! The function F(x) and the three-term energy expansion
//! e = (3/5)(6 pi^2)^(2/3) (rho_up^(5/3) + rho_dn^(5/3)) + 8 pi a rho_up rho_dn
//!     + a^2 rho_up^(7/3) F(rho_dn / rho_up).

use crate::error::{input, Result};
use crate::quad::KahanSum;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Spin-resolved number densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinDensities {
    pub rho_up: f64,
    pub rho_down: f64,
}

impl SpinDensities {
    pub fn new(rho_up: f64, rho_down: f64) -> Result<Self> {
        if !(rho_up >= 0.0 && rho_down >= 0.0 && rho_up.is_finite() && rho_down.is_finite()) {
            return input(format!("densities must be finite and >= 0, got ({rho_up}, {rho_down})"));
        }
        Ok(Self { rho_up, rho_down })
    }

    /// Equal spin populations with total density `rho`.
    pub fn symmetric(rho: f64) -> Result<Self> {
        Self::new(0.5 * rho, 0.5 * rho)
    }

    pub fn total(&self) -> f64 {
        self.rho_up + self.rho_down
    }

    pub fn kf_up(&self) -> f64 {
        fermi_momentum(self.rho_up)
    }

    pub fn kf_down(&self) -> f64 {
        fermi_momentum(self.rho_down)
    }
}

/// k_F = (6 pi^2 rho)^(1/3) for a single spin species.
pub fn fermi_momentum(rho: f64) -> f64 {
    (6.0 * PI * PI * rho).cbrt()
}

/// Inverse of [`fermi_momentum`].
pub fn density_from_kf(kf: f64) -> f64 {
    kf.powi(3) / (6.0 * PI * PI)
}

/// Energy density split by order in the scattering length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub second_order: f64,
    pub third_order: f64,
    pub total: f64,
}

/// (6 pi^2)^(1/3) / 35.
fn prefactor() -> f64 {
    (6.0 * PI * PI).cbrt() / 35.0
}

/// F(1) = (48/35)(11 - 2 ln 2)(6 pi^2)^(1/3).
pub fn f_at_one() -> f64 {
    48.0 / 35.0 * (11.0 - 2.0 * 2f64.ln()) * (6.0 * PI * PI).cbrt()
}

/// Coefficient c with third_order = c a^2 rho^(7/3) at equal spin densities.
pub fn symmetric_third_order_coefficient() -> f64 {
    4.0 / 35.0 * (11.0 - 2.0 * 2f64.ln()) * (9.0 * PI).powf(2.0 / 3.0)
}

// Below this cube root the bracket is summed from its power series.
const SERIES_Y: f64 = 0.05;
// Inside |1 - y| < NEAR_ONE the vanishing log coefficient is factored out.
const NEAR_ONE: f64 = 1e-6;

/// Bracket of F as a power series in y = x^(1/3), valid for small y.
fn bracket_series(y: f64) -> f64 {
    let l = y.ln();
    let c: [(i32, f64); 12] = [
        (3, 420.0),
        (5, -168.0),
        (6, 280.0),
        (7, -1136.0 / 35.0),
        (8, -42.0),
        (9, 8.0),
        (10, -24.0 / 5.0),
        (11, 20.0 / 11.0),
        (12, -4.0 / 3.0),
        (13, 280.0 / 429.0),
        (14, -40.0 / 77.0),
        (15, 42.0 / 143.0),
    ];
    let mut s = KahanSum::new();
    for &(k, ck) in c.iter().rev() {
        s.add(ck * y.powi(k));
    }
    s.add(48.0 * y.powi(7) * l);
    s.value()
}

/// Bracket of F evaluated term by term with compensated summation.
fn bracket_direct(x: f64, y: f64) -> f64 {
    let x73 = x * x * y;
    let mut s = KahanSum::new();
    s.add(16.0 * x73 * x.ln());
    s.add(-48.0 * (x73 + 1.0) * y.ln_1p());
    for t in [15.0 * y, -4.0 * y * y, 33.0 * x, 33.0 * x * y, -4.0 * x * y * y, 15.0 * x * x] {
        s.add(6.0 * t);
    }
    let d = 1.0 - y;
    if d.abs() < NEAR_ONE {
        // P(y) = (1 - y)^2 Q(y), Q = 1 + 2y - 3y^2 - 3y^3 + 2y^4 + y^5
        let q = 1.0 + y * (2.0 + y * (-3.0 + y * (-3.0 + y * (2.0 + y))));
        if d != 0.0 {
            s.add(21.0 * d * d * q * (d.abs().ln() - y.ln_1p()));
        }
    } else {
        let p_terms = [1.0, -6.0 * y * y, 5.0 * x, 5.0 * x * y, -6.0 * x * y * y, x73];
        let lg = d.abs().ln() - y.ln_1p();
        for t in p_terms {
            s.add(21.0 * t * lg);
        }
    }
    s.value()
}

/// F(x) for x >= 0.
pub fn f(x: f64) -> Result<f64> {
    if !(x >= 0.0) || x.is_nan() {
        return input(format!("F requires x >= 0, got {x}"));
    }
    if x.is_infinite() {
        return input("F requires finite x");
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let y = x.cbrt();
    if y < SERIES_Y {
        return Ok(prefactor() * bracket_series(y));
    }
    if y > 1.0 / SERIES_Y {
        // large x: x^(7/3) F(1/x) through the small-argument series
        let yi = 1.0 / y;
        return Ok(prefactor() * x * x * y * bracket_series(yi));
    }
    Ok(prefactor() * bracket_direct(x, y))
}

/// F(x) always through the term-by-term formula (no series branches).
pub fn f_direct(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return input(format!("f_direct requires finite x > 0, got {x}"));
    }
    Ok(prefactor() * bracket_direct(x, x.cbrt()))
}

/// Small-y power-series evaluation of F, for cross-checks.
pub fn f_series(x: f64) -> Result<f64> {
    if !(x >= 0.0) || !x.is_finite() {
        return input(format!("f_series requires finite x >= 0, got {x}"));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(prefactor() * bracket_series(x.cbrt()))
}

fn kinetic(d: &SpinDensities) -> f64 {
    0.6 * (6.0 * PI * PI).powf(2.0 / 3.0) * (d.rho_up.powf(5.0 / 3.0) + d.rho_down.powf(5.0 / 3.0))
}

/// Two-term expansion: kinetic + 8 pi a rho_up rho_dn.
pub fn lss_second_order(d: &SpinDensities, a: f64) -> Result<f64> {
    if !(a >= 0.0) {
        return input(format!("scattering length must be >= 0, got {a}"));
    }
    Ok(kinetic(d) + 8.0 * PI * a * d.rho_up * d.rho_down)
}

/// a^2 rho_up^(7/3) F(rho_dn / rho_up), written symmetrically when rho_up = 0.
pub fn third_order(d: &SpinDensities, a: f64) -> Result<f64> {
    if d.rho_up > 0.0 {
        Ok(a * a * d.rho_up.powf(7.0 / 3.0) * f(d.rho_down / d.rho_up)?)
    } else if d.rho_down > 0.0 {
        Ok(a * a * d.rho_down.powf(7.0 / 3.0) * f(0.0)?)
    } else {
        Ok(0.0)
    }
}

/// Three-term Huang-Yang energy density.
pub fn huang_yang_energy(d: &SpinDensities, a: f64) -> Result<EnergyBreakdown> {
    SpinDensities::new(d.rho_up, d.rho_down)?;
    let second = lss_second_order(d, a)?;
    let k = kinetic(d);
    let second_order = 8.0 * PI * a * d.rho_up * d.rho_down;
    let third = third_order(d, a)?;
    Ok(EnergyBreakdown { kinetic: k, second_order, third_order: third, total: second + third })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn f_at_zero_and_one() {
        assert_eq!(f(0.0).unwrap(), 0.0);
        assert!(rel(f(1.0).unwrap(), f_at_one()) < 1e-13);
        assert!((f_at_one() - 51.390_283_318_691_81).abs() < 1e-10);
        assert!(f(-1.0).is_err());
    }

    #[test]
    fn reference_values() {
        // 50-digit evaluations of the closed form
        let cases = [
            (1e-9, 4.677_330_639_846_069e-8),
            (1e-6, 4.677_148_504_307_951e-5),
            (1e-3, 0.046_615_775_747_791_70),
            (0.125, 5.675_050_920_317_054),
            (0.5, 23.657_051_154_729_105),
            (2.0, 119.224_066_913_132_06),
            (8.0, 726.406_517_800_582_9),
        ];
        for (x, v) in cases {
            assert!(rel(f(x).unwrap(), v) < 1e-12, "x = {x}: {} vs {v}", f(x).unwrap());
        }
    }

    #[test]
    fn series_and_direct_agree_at_switch() {
        for y in [0.04, 0.05, 0.06, 0.08] {
            let x: f64 = y * y * y;
            assert!(rel(f_series(x).unwrap(), f_direct(x).unwrap()) < 1e-10, "y = {y}");
        }
    }

    #[test]
    fn symmetric_coefficient() {
        let d = SpinDensities::symmetric(1.0).unwrap();
        let e = huang_yang_energy(&d, 1.0).unwrap();
        assert!(rel(e.third_order, symmetric_third_order_coefficient()) < 1e-13);
        assert!((symmetric_third_order_coefficient() - 10.197_123_725_129_4).abs() < 1e-10);
        assert!(rel(e.kinetic, 0.6 * (3.0 * PI * PI).powf(2.0 / 3.0)) < 1e-14);
        assert!(rel(e.second_order, 2.0 * PI) < 1e-15);
    }

    #[test]
    fn polarized_and_free_limits() {
        let d = SpinDensities::new(0.3, 0.0).unwrap();
        let e = huang_yang_energy(&d, 0.7).unwrap();
        assert_eq!(e.second_order, 0.0);
        assert_eq!(e.third_order, 0.0);
        assert_eq!(e.total, e.kinetic);
        let d = SpinDensities::new(0.0, 0.2).unwrap();
        assert_eq!(huang_yang_energy(&d, 0.7).unwrap().third_order, 0.0);
        let d = SpinDensities::new(0.2, 0.1).unwrap();
        let e = huang_yang_energy(&d, 0.0).unwrap();
        assert_eq!(e.second_order + e.third_order, 0.0);
        assert!(SpinDensities::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn lss_is_total_minus_third() {
        let d = SpinDensities::new(0.02, 0.05).unwrap();
        let e = huang_yang_energy(&d, 0.3).unwrap();
        let lss = lss_second_order(&d, 0.3).unwrap();
        assert_eq!(lss, e.kinetic + e.second_order);
        assert!((lss - (e.total - e.third_order)).abs() <= 4.0 * f64::EPSILON * e.total);
    }
}
