//! Nonnegative, radial, compactly supported pair potentials.
//!
//! Units: hbar = 1 and particle mass 1/2, so the one-body kinetic operator is
//! -Laplacian and a potential height is measured in inverse length squared.

use crate::error::{input, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Shape of a radial potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `v0` for r <= `range`, zero beyond.
    SquareWell { v0: f64, range: f64 },
    /// `v0 * exp(-r^2 / (2 sigma^2))` for r <= `cutoff`, zero beyond.
    TruncatedGaussian { v0: f64, sigma: f64, cutoff: f64 },
    /// Piecewise-linear interpolation of (r, V) nodes; zero past the last node.
    Tabulated { r: Vec<f64>, v: Vec<f64> },
}

/// An admissible interaction V(|x|).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPotential {
    pub kind: PotentialKind,
}

impl RadialPotential {
    pub fn square_well(v0: f64, range: f64) -> Result<Self> {
        if !(v0 >= 0.0 && v0.is_finite()) {
            return input(format!("square well height must be finite and >= 0, got {v0}"));
        }
        if !(range > 0.0 && range.is_finite()) {
            return input(format!("square well range must be > 0, got {range}"));
        }
        Ok(Self { kind: PotentialKind::SquareWell { v0, range } })
    }

    pub fn truncated_gaussian(v0: f64, sigma: f64, cutoff: f64) -> Result<Self> {
        if !(v0 >= 0.0 && v0.is_finite()) {
            return input(format!("gaussian height must be finite and >= 0, got {v0}"));
        }
        if !(sigma > 0.0 && cutoff > 0.0 && sigma.is_finite() && cutoff.is_finite()) {
            return input("gaussian width and cutoff must be positive");
        }
        Ok(Self { kind: PotentialKind::TruncatedGaussian { v0, sigma, cutoff } })
    }

    pub fn tabulated(r: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if r.len() != v.len() || r.len() < 2 {
            return input("tabulated potential needs at least two (r, V) nodes of equal length");
        }
        if r[0] != 0.0 {
            return input("tabulated potential must start at r = 0");
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) {
            return input("tabulated radii must be strictly increasing");
        }
        if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return input("tabulated values must be finite and >= 0");
        }
        Ok(Self { kind: PotentialKind::Tabulated { r, v } })
    }

    /// Parse a two-column `r V` text table; `#` starts a comment.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut r = Vec::new();
        let mut v = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            if cols.len() != 2 {
                return input(format!("line {}: expected two columns, found {}", lineno + 1, cols.len()));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| crate::Error::Input(format!("line {}: {e}", lineno + 1)))
            };
            r.push(parse(cols[0])?);
            v.push(parse(cols[1])?);
        }
        Self::tabulated(r, v)
    }

    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Input(format!("{}: {e}", path.display())))?;
        Self::parse_table(&text)
    }

    /// Smallest R with V(r) = 0 for all r > R.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { range, .. } => *range,
            PotentialKind::TruncatedGaussian { cutoff, .. } => *cutoff,
            PotentialKind::Tabulated { r, .. } => *r.last().unwrap(),
        }
    }

    /// V(r). Negative radii are rejected.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return input(format!("radius must be >= 0, got {r}"));
        }
        Ok(self.value(r))
    }

    /// V(r) without argument checking; callers guarantee r >= 0.
    pub fn value(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { v0, range } => {
                if r <= *range {
                    *v0
                } else {
                    0.0
                }
            }
            PotentialKind::TruncatedGaussian { v0, sigma, cutoff } => {
                if r <= *cutoff {
                    v0 * (-r * r / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                }
            }
            PotentialKind::Tabulated { r: rs, v } => {
                let last = *rs.last().unwrap();
                if r > last {
                    return 0.0;
                }
                let i = match rs.binary_search_by(|x| x.total_cmp(&r)) {
                    Ok(i) => return v[i],
                    Err(i) => i,
                };
                let (r0, r1) = (rs[i - 1], rs[i]);
                let t = (r - r0) / (r1 - r0);
                v[i - 1] + t * (v[i] - v[i - 1])
            }
        }
    }

    /// One-sided limit of V at r, from below (`from_below`) or from above.
    pub fn value_limit(&self, r: f64, from_below: bool) -> f64 {
        let rs = self.support_radius();
        if r > rs {
            return 0.0;
        }
        if r == rs {
            if from_below {
                return match &self.kind {
                    PotentialKind::Tabulated { v, .. } => *v.last().unwrap(),
                    _ => self.value(rs),
                };
            }
            return 0.0;
        }
        self.value(r)
    }

    /// Interior breakpoints where V or its derivative may jump.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            PotentialKind::Tabulated { r, .. } => r.clone(),
            _ => vec![0.0, self.support_radius()],
        }
    }

    /// V-hat(0) = 4 pi int_0^inf V(r) r^2 dr.
    pub fn v_hat_zero(&self) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { v0, range } => 4.0 * PI * v0 * range.powi(3) / 3.0,
            PotentialKind::Tabulated { r, v } => {
                // exact integral of a linear segment times r^2
                let mut s = quad::KahanSum::new();
                for i in 1..r.len() {
                    let (a, b) = (r[i - 1], r[i]);
                    let slope = (v[i] - v[i - 1]) / (b - a);
                    let c0 = v[i - 1] - slope * a;
                    s.add(c0 * (b.powi(3) - a.powi(3)) / 3.0 + slope * (b.powi(4) - a.powi(4)) / 4.0);
                }
                4.0 * PI * s.value()
            }
            PotentialKind::TruncatedGaussian { .. } => {
                let rc = self.support_radius();
                let res = quad::adaptive(|r| self.value(r) * r * r, &[0.0, 0.5 * rc, rc], 1e-14, 0.0, 4000);
                4.0 * PI * res.value
            }
        }
    }

    /// Continuum transform 4 pi int_0^inf V(r) r sin(p r) / p dr.
    pub fn fourier(&self, p: f64) -> f64 {
        let p = p.abs();
        if p == 0.0 {
            return self.v_hat_zero();
        }
        if let PotentialKind::SquareWell { v0, range } = &self.kind {
            let x = p * range;
            return 4.0 * PI * v0 * (x.sin() - x * x.cos()) / p.powi(3);
        }
        let mut pts = self.breakpoints();
        let rc = self.support_radius();
        let waves = (p * rc / PI).ceil() as usize;
        for i in 1..waves {
            pts.push(rc * i as f64 / waves as f64);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let res = quad::adaptive(|r| self.value(r) * r * (p * r).sin() / p, &pts, 1e-13, 1e-15, 8000);
        4.0 * PI * res.value
    }

    /// The potential multiplied by a nonnegative constant.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return input(format!("scale factor must be >= 0, got {alpha}"));
        }
        let kind = match &self.kind {
            PotentialKind::SquareWell { v0, range } => PotentialKind::SquareWell { v0: v0 * alpha, range: *range },
            PotentialKind::TruncatedGaussian { v0, sigma, cutoff } => {
                PotentialKind::TruncatedGaussian { v0: v0 * alpha, sigma: *sigma, cutoff: *cutoff }
            }
            PotentialKind::Tabulated { r, v } => {
                PotentialKind::Tabulated { r: r.clone(), v: v.iter().map(|x| x * alpha).collect() }
            }
        };
        Ok(Self { kind })
    }
}

/// Square wells of the given range with heights `v_max * 2^(i - n + 1)`.
///
/// Useful for approximating a hard core of radius `range`: the scattering
/// length of the well tends to `range` as the height grows.
pub fn soft_sphere_ladder(range: f64, v_max: f64, n: usize) -> Result<Vec<RadialPotential>> {
    if n == 0 {
        return input("ladder needs at least one rung");
    }
    (0..n)
        .map(|i| RadialPotential::square_well(v_max * 2f64.powi(i as i32 - n as i32 + 1), range))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_transform_closed_form_and_quadrature_agree() {
        let w = RadialPotential::square_well(2.0, 1.0).unwrap();
        let t = RadialPotential::tabulated(vec![0.0, 1.0, 1.0 + 1e-9], vec![2.0, 2.0, 0.0]).unwrap();
        for p in [0.0, 0.3, 1.0, 4.5] {
            let (a, b) = (w.fourier(p), t.fourier(p));
            assert!((a - b).abs() < 1e-7 * w.v_hat_zero(), "p = {p}: {a} vs {b}");
        }
    }

    #[test]
    fn square_well_values() {
        let v = RadialPotential::square_well(2.0, 1.0).unwrap();
        assert_eq!(v.eval(0.5).unwrap(), 2.0);
        assert_eq!(v.eval(1.5).unwrap(), 0.0);
        assert!(v.eval(-0.1).is_err());
        assert!((v.v_hat_zero() - 8.0 * PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn tabulated_interpolates_linearly() {
        let v = RadialPotential::tabulated(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(v.eval(0.5).unwrap(), 0.5);
        assert_eq!(v.eval(2.0).unwrap(), 0.0);
        // 4 pi int_0^1 (1 - r) r^2 dr = 4 pi / 12
        assert!((v.v_hat_zero() - PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn table_parser_skips_comments() {
        let v = RadialPotential::parse_table("# r V\n0 3\n0.5 2 # mid\n\n1.0 0\n").unwrap();
        assert_eq!(v.support_radius(), 1.0);
        assert_eq!(v.eval(0.25).unwrap(), 2.5);
        assert!(RadialPotential::parse_table("0 1 2\n").is_err());
        assert!(RadialPotential::parse_table("0 1\n1 -1\n").is_err());
    }

    #[test]
    fn one_sided_limits_at_the_edge() {
        let v = RadialPotential::square_well(2.0, 1.0).unwrap();
        assert_eq!(v.value_limit(1.0, true), 2.0);
        assert_eq!(v.value_limit(1.0, false), 0.0);
        assert_eq!(v.value_limit(1.5, true), 0.0);
        assert_eq!(v.value_limit(0.5, false), 2.0);
    }

    #[test]
    fn zero_potential_has_zero_integral() {
        let v = RadialPotential::square_well(0.0, 1.0).unwrap();
        assert_eq!(v.v_hat_zero(), 0.0);
    }

    #[test]
    fn ladder_heights_double() {
        let l = soft_sphere_ladder(1.0, 64.0, 4).unwrap();
        let h: Vec<f64> = l
            .iter()
            .map(|p| match p.kind {
                PotentialKind::SquareWell { v0, .. } => v0,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(h, vec![8.0, 16.0, 32.0, 64.0]);
    }
}
