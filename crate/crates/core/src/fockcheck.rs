//! Exact second quantization on a handful of momentum modes.
//!
//! Basis states are bit strings over the ordered mode list; the state with
//! occupied set S = {s1 < s2 < ...} is a*_{s1} a*_{s2} ... Omega
//! (Jordan-Wigner). Modes are ordered by spin and then lexicographically in k.
//!
//! Operators are kept symbolically as sums of ladder monomials and turned
//! into dense matrices on demand, either on the whole space or on a sector of
//! fixed particle numbers. Interaction kernels are trigonometric polynomials
//! on the torus (finitely many Fourier coefficients), so pointwise products
//! such as V phi^2 are exact finite convolutions and every operator identity
//! below holds exactly for the model, not only up to truncation.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::lattice::{norm2, MomentumLattice, Mode};
use crate::potential::RadialPotential;
use crate::scattering::PeriodicScattering;

pub const MAX_MODES: usize = 16;
/// Largest full-space dimension assembled as a dense matrix.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockMode {
    pub k: Mode,
    /// 0 = up, 1 = down.
    pub spin: usize,
    pub in_fermi_ball: bool,
}

#[derive(Debug, Clone)]
pub struct FockSpace {
    pub l: f64,
    pub k_f: [f64; 2],
    pub modes: Vec<FockMode>,
    pub dim: usize,
    index: HashMap<(usize, Mode), usize>,
}

/// One ladder operator: (mode index, is creation).
pub type Ladder = (usize, bool);

impl FockSpace {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn find(&self, spin: usize, k: Mode) -> Option<usize> {
        self.index.get(&(spin, k)).copied()
    }

    fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.l
    }

    /// Physical |k|^2 of a mode.
    pub fn k2(&self, i: usize) -> f64 {
        self.spacing().powi(2) * norm2(self.modes[i].k) as f64
    }

    /// Apply a product of ladder operators (rightmost first) to a basis state.
    pub fn apply(&self, ops: &[Ladder], mut state: u64) -> Option<(u64, f64)> {
        let mut sign = 1.0;
        for &(j, create) in ops.iter().rev() {
            let bit = 1u64 << j;
            let occupied = state & bit != 0;
            if occupied == create {
                return None;
            }
            if (state & (bit - 1)).count_ones() % 2 == 1 {
                sign = -sign;
            }
            state ^= bit;
        }
        Some((state, sign))
    }

    /// Bit mask of the Fermi-ball modes, i.e. the free Fermi gas state.
    pub fn ffg_state(&self) -> u64 {
        self.modes.iter().enumerate().filter(|(_, m)| m.in_fermi_ball).fold(0, |s, (i, _)| s | (1 << i))
    }

    pub fn spin_mask(&self, spin: usize) -> u64 {
        self.modes.iter().enumerate().filter(|(_, m)| m.spin == spin).fold(0, |s, (i, _)| s | (1 << i))
    }

    /// (N_up, N_dn) of the free Fermi gas state.
    pub fn ball_counts(&self) -> [usize; 2] {
        let b = self.ffg_state();
        [(b & self.spin_mask(0)).count_ones() as usize, (b & self.spin_mask(1)).count_ones() as usize]
    }

    /// Basis states with the given particle numbers, ascending.
    pub fn sector(&self, n_up: usize, n_dn: usize) -> Vec<u64> {
        let (m0, m1) = (self.spin_mask(0), self.spin_mask(1));
        (0..self.dim as u64)
            .filter(|s| (s & m0).count_ones() as usize == n_up && (s & m1).count_ones() as usize == n_dn)
            .collect()
    }
}

/// Builds the space on the selected (spin, k) modes of a lattice.
pub fn build_fock(lat: &MomentumLattice, selected: &[(usize, Mode)]) -> Result<FockSpace> {
    let mut modes: Vec<FockMode> = Vec::new();
    for &(spin, k) in selected {
        if spin > 1 {
            return input(format!("spin index must be 0 or 1, got {spin}"));
        }
        modes.push(FockMode { k, spin, in_fermi_ball: lat.in_ball(spin, k) });
    }
    modes.sort_by_key(|m| (m.spin, m.k));
    modes.dedup();
    if modes.len() > MAX_MODES {
        return Err(Error::Resource(format!("{} modes requested, at most {MAX_MODES} supported", modes.len())));
    }
    let index = modes.iter().enumerate().map(|(i, m)| ((m.spin, m.k), i)).collect();
    Ok(FockSpace { l: lat.l, k_f: lat.k_f, dim: 1 << modes.len(), modes, index })
}

/// Symbolic operator: sum of coefficient times ladder product (written left to right).
#[derive(Debug, Clone, Default)]
pub struct OpSum {
    pub terms: Vec<(f64, Vec<Ladder>)>,
}

impl OpSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity(c: f64) -> Self {
        Self { terms: vec![(c, Vec::new())] }
    }

    pub fn add(&mut self, c: f64, ops: Vec<Ladder>) {
        if c != 0.0 {
            self.terms.push((c, ops));
        }
    }

    pub fn extend(&mut self, other: &OpSum, scale: f64) {
        for (c, ops) in &other.terms {
            self.add(c * scale, ops.clone());
        }
    }

    pub fn scaled(&self, s: f64) -> OpSum {
        let mut o = OpSum::new();
        o.extend(self, s);
        o
    }

    pub fn adjoint(&self) -> OpSum {
        OpSum { terms: self.terms.iter().map(|(c, ops)| (*c, ops.iter().rev().map(|(j, d)| (*j, !d)).collect())).collect() }
    }

    pub fn mul(&self, other: &OpSum) -> OpSum {
        let mut o = OpSum::new();
        for (c1, a) in &self.terms {
            for (c2, b) in &other.terms {
                let mut ops = a.clone();
                ops.extend_from_slice(b);
                o.add(c1 * c2, ops);
            }
        }
        o
    }

    /// Anticommutator {A, B}.
    pub fn anticommutator(&self, other: &OpSum) -> OpSum {
        let mut o = self.mul(other);
        o.extend(&other.mul(self), 1.0);
        o
    }

    /// Net particle-number change per spin of every term, if uniform.
    fn conserves_numbers(&self, fock: &FockSpace) -> bool {
        self.terms.iter().all(|(_, ops)| {
            let mut d = [0i64; 2];
            for (j, create) in ops {
                d[fock.modes[*j].spin] += if *create { 1 } else { -1 };
            }
            d == [0, 0]
        })
    }

    pub fn to_dense(&self, fock: &FockSpace) -> Result<DMatrix<f64>> {
        if fock.dim > MAX_DENSE_DIM {
            return Err(Error::Resource(format!("dense matrix of dimension {} exceeds {MAX_DENSE_DIM}", fock.dim)));
        }
        let mut m = DMatrix::zeros(fock.dim, fock.dim);
        for (c, ops) in &self.terms {
            for s in 0..fock.dim as u64 {
                if let Some((t, sign)) = fock.apply(ops, s) {
                    m[(t as usize, s as usize)] += c * sign;
                }
            }
        }
        Ok(m)
    }

    /// Matrix on a sector basis; terms leaving the sector are an error.
    pub fn to_sector(&self, fock: &FockSpace, basis: &[u64]) -> Result<DMatrix<f64>> {
        let pos: HashMap<u64, usize> = basis.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut m = DMatrix::zeros(basis.len(), basis.len());
        for (c, ops) in &self.terms {
            for (i, s) in basis.iter().enumerate() {
                if let Some((t, sign)) = fock.apply(ops, *s) {
                    let j = *pos.get(&t).ok_or_else(|| Error::Input("operator leaves the particle-number sector".into()))?;
                    m[(j, i)] += c * sign;
                }
            }
        }
        Ok(m)
    }
}

/// Dense operator with a label and a hermiticity flag.
#[derive(Debug, Clone)]
pub struct OperatorHandle {
    pub matrix: DMatrix<f64>,
    pub label: String,
    pub hermitian: bool,
}

impl OperatorHandle {
    pub fn new(fock: &FockSpace, label: impl Into<String>, op: &OpSum) -> Result<Self> {
        let matrix = op.to_dense(fock)?;
        let hermitian = max_abs(&(&matrix - matrix.transpose())) <= 1e-12 * matrix.norm().max(f64::MIN_POSITIVE);
        Ok(Self { matrix, label: label.into(), hermitian })
    }

    /// Smallest and largest eigenvalue of the symmetric part.
    pub fn extremes(&self) -> (f64, f64) {
        eig_extremes(&self.matrix)
    }
}

/// Periodic function on the box given by Fourier coefficients on a cube of
/// integer momenta; coefficients outside the cube vanish.
#[derive(Debug, Clone)]
pub struct TorusFunction {
    pub l: f64,
    pub radius: i64,
    coeffs: Vec<f64>,
}

impl TorusFunction {
    fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    fn slot(&self, n: Mode) -> Option<usize> {
        let r = self.radius;
        if n.iter().any(|c| c.abs() > r) {
            return None;
        }
        let s = self.side();
        Some((((n[0] + r) * s + (n[1] + r)) * s + (n[2] + r)) as usize)
    }

    /// Coefficients f(n) for |n|^2 <= m_max, zero elsewhere.
    pub fn from_fn(l: f64, m_max: i64, mut f: impl FnMut(Mode) -> Result<f64>) -> Result<Self> {
        let radius = (m_max.max(0) as f64).sqrt().floor() as i64;
        let side = 2 * radius + 1;
        let mut out = Self { l, radius, coeffs: vec![0.0; (side * side * side) as usize] };
        for x in -radius..=radius {
            for y in -radius..=radius {
                for z in -radius..=radius {
                    let n = [x, y, z];
                    if norm2(n) <= m_max {
                        let v = f(n)?;
                        let i = out.slot(n).unwrap();
                        out.coeffs[i] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// f-hat(n).
    pub fn get(&self, n: Mode) -> f64 {
        self.slot(n).map(|i| self.coeffs[i]).unwrap_or(0.0)
    }

    /// Integral over the box, equal to f-hat(0).
    pub fn integral(&self) -> f64 {
        self.get([0, 0, 0])
    }

    /// Pointwise product: (f g)-hat(n) = L^-3 sum_q f-hat(n - q) g-hat(q).
    pub fn product(&self, other: &TorusFunction) -> TorusFunction {
        let radius = self.radius + other.radius;
        let side = 2 * radius + 1;
        let mut out = TorusFunction { l: self.l, radius, coeffs: vec![0.0; (side * side * side) as usize] };
        let vol = self.l.powi(3);
        let r2 = other.radius;
        let mut qs = Vec::new();
        for x in -r2..=r2 {
            for y in -r2..=r2 {
                for z in -r2..=r2 {
                    let g = other.get([x, y, z]);
                    if g != 0.0 {
                        qs.push(([x, y, z], g));
                    }
                }
            }
        }
        for x in -radius..=radius {
            for y in -radius..=radius {
                for z in -radius..=radius {
                    let mut acc = 0.0;
                    for (q, g) in &qs {
                        acc += self.get([x - q[0], y - q[1], z - q[2]]) * g;
                    }
                    let i = out.slot([x, y, z]).unwrap();
                    out.coeffs[i] = acc / vol;
                }
            }
        }
        out
    }

    pub fn combine(&self, a: f64, other: &TorusFunction, b: f64) -> TorusFunction {
        let radius = self.radius.max(other.radius);
        TorusFunction::from_fn(self.l, 3 * radius * radius, |n| Ok(a * self.get(n) + b * other.get(n))).unwrap()
    }
}

/// Interaction kernels on the tiny lattice.
#[derive(Debug, Clone)]
pub struct Kernels {
    pub v: TorusFunction,
    pub phi: TorusFunction,
    pub v_phi: TorusFunction,
    pub v_phi2: TorusFunction,
    pub v_f: TorusFunction,
}

impl Kernels {
    /// V-hat and phi-hat on |n|^2 <= m_trunc; phi-hat comes from the table,
    /// and transfers missing from the table are an error.
    pub fn new(pot: &RadialPotential, per: &PeriodicScattering, m_trunc: i64) -> Result<Self> {
        let dk = per.spacing();
        let v = TorusFunction::from_fn(per.l, m_trunc, |n| Ok(pot.fourier(dk * (norm2(n) as f64).sqrt())))?;
        let phi = TorusFunction::from_fn(per.l, m_trunc, |n| {
            per.phi_by_m(norm2(n) as u64).ok_or_else(|| Error::Input(format!("phi-hat missing at transfer {n:?}")))
        })?;
        Ok(Self::from_parts(v, phi))
    }

    pub fn from_parts(v: TorusFunction, phi: TorusFunction) -> Self {
        let v_phi = v.product(&phi);
        let v_phi2 = v_phi.product(&phi);
        let v_f = v.combine(1.0, &v_phi, -1.0);
        Self { v, phi, v_phi, v_phi2, v_f }
    }

    /// Kernel by name: "v", "vphi" or "vf".
    pub fn by_name(&self, name: &str) -> Result<&TorusFunction> {
        match name {
            "v" => Ok(&self.v),
            "vphi" => Ok(&self.v_phi),
            "vf" => Ok(&self.v_f),
            _ => input(format!("unknown kernel {name:?}; expected v, vphi or vf")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proj {
    U,
    V,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pos {
    X,
    Y,
}

/// a^#_spin(f_pos) with f = u, v or the identity.
#[derive(Debug, Clone, Copy)]
struct Factor {
    dagger: bool,
    spin: usize,
    pos: Pos,
    proj: Proj,
}

fn fa(dagger: bool, spin: usize, pos: Pos, proj: Proj) -> Factor {
    Factor { dagger, spin, pos, proj }
}

fn admissible(fock: &FockSpace, f: &Factor) -> Vec<usize> {
    (0..fock.n_modes())
        .filter(|&i| {
            let m = &fock.modes[i];
            m.spin == f.spin
                && match f.proj {
                    Proj::U => !m.in_fermi_ball,
                    Proj::V => m.in_fermi_ball,
                    Proj::All => true,
                }
        })
        .collect()
}

/// int int g(x - y) prod_j a^#(f_j) dx dy in momentum space.
///
/// a(f_x) = L^{-3/2} sum_k f-hat(k) e^{ikx} a_k and a*(f_x) carries e^{-ikx};
/// the double integral leaves L^3 g-hat(A) delta(A + B) with A, B the phase
/// momenta at x and y.
fn integrate_pair(fock: &FockSpace, g: &TorusFunction, factors: &[Factor], scale: f64, out: &mut OpSum) {
    let lists: Vec<Vec<usize>> = factors.iter().map(|f| admissible(fock, f)).collect();
    let norm = scale * fock.l.powf(3.0 - 1.5 * factors.len() as f64);
    let mut idx = vec![0usize; factors.len()];
    if lists.iter().any(|l| l.is_empty()) {
        return;
    }
    loop {
        let mut a = [0i64; 3];
        let mut b = [0i64; 3];
        for (j, f) in factors.iter().enumerate() {
            let k = fock.modes[lists[j][idx[j]]].k;
            let s = if f.dagger { -1 } else { 1 };
            let t = if f.pos == Pos::X { &mut a } else { &mut b };
            for c in 0..3 {
                t[c] += s * k[c];
            }
        }
        if a[0] + b[0] == 0 && a[1] + b[1] == 0 && a[2] + b[2] == 0 {
            let gv = g.get(a);
            if gv != 0.0 {
                let ops = factors.iter().enumerate().map(|(j, f)| (lists[j][idx[j]], f.dagger)).collect();
                out.add(norm * gv, ops);
            }
        }
        let mut d = 0;
        loop {
            if d == factors.len() {
                return;
            }
            idx[d] += 1;
            if idx[d] < lists[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// int dx prod_j a^#(f_j, x) for factors all at the same point.
fn integrate_local(fock: &FockSpace, factors: &[Factor], scale: f64, out: &mut OpSum) {
    // the constant 1 / L^3 has g-hat = delta_{n,0}, and int dy of it is 1
    let one = TorusFunction::from_fn(fock.l, 0, |_| Ok(1.0)).unwrap();
    let moved: Vec<Factor> = factors.iter().map(|f| Factor { pos: Pos::X, ..*f }).collect();
    integrate_pair(fock, &one, &moved, scale, out);
}

const OPP: [(usize, usize); 2] = [(0, 1), (1, 0)];

use Pos::{X, Y};
use Proj::{All, U, V};

/// Hermitian part helper: A + A^dagger.
fn plus_hc(a: &OpSum) -> OpSum {
    let mut o = a.clone();
    o.extend(&a.adjoint(), 1.0);
    o
}

/// H_0 = sum ||k|^2 - k_F^2| n_k.
pub fn h0(fock: &FockSpace) -> OpSum {
    let mut o = OpSum::new();
    for i in 0..fock.n_modes() {
        let kf = fock.k_f[fock.modes[i].spin];
        o.add((fock.k2(i) - kf * kf).abs(), vec![(i, true), (i, false)]);
    }
    o
}

pub fn q2(fock: &FockSpace, g: &TorusFunction) -> OpSum {
    let mut a = OpSum::new();
    for (s, t) in OPP {
        integrate_pair(fock, g, &[fa(true, s, X, U), fa(true, t, Y, U), fa(true, t, Y, V), fa(true, s, X, V)], 0.5, &mut a);
    }
    plus_hc(&a)
}

pub fn q3(fock: &FockSpace, g: &TorusFunction) -> OpSum {
    let mut a = OpSum::new();
    for (s, t) in OPP {
        integrate_pair(fock, g, &[fa(true, t, Y, U), fa(true, s, X, U), fa(true, s, X, V), fa(false, t, Y, U)], 1.0, &mut a);
    }
    plus_hc(&a)
}

pub fn q4(fock: &FockSpace, g: &TorusFunction) -> OpSum {
    let mut a = OpSum::new();
    for (s, t) in OPP {
        integrate_pair(fock, g, &[fa(true, s, X, U), fa(true, t, Y, U), fa(false, t, Y, U), fa(false, s, X, U)], 0.5, &mut a);
    }
    a
}

/// The four pieces of E_corr in display order.
pub fn e_corr(fock: &FockSpace, g: &TorusFunction) -> [OpSum; 4] {
    let mut e = [OpSum::new(), OpSum::new(), OpSum::new(), OpSum::new()];
    let mut e4 = OpSum::new();
    for (s, t) in OPP {
        integrate_pair(fock, g, &[fa(true, s, X, V), fa(true, t, Y, V), fa(false, t, Y, V), fa(false, s, X, V)], 0.5, &mut e[0]);
        integrate_pair(fock, g, &[fa(true, s, X, U), fa(true, s, X, V), fa(false, t, Y, V), fa(false, t, Y, U)], 1.0, &mut e[1]);
        integrate_pair(fock, g, &[fa(true, s, X, U), fa(true, t, Y, V), fa(false, t, Y, V), fa(false, s, X, U)], -1.0, &mut e[2]);
        integrate_pair(fock, g, &[fa(true, s, X, U), fa(true, t, Y, V), fa(true, s, X, V), fa(false, t, Y, V)], 1.0, &mut e4);
    }
    e[3] = plus_hc(&e4);
    e
}

/// Kinetic energy plus the pair interaction, split by spin pairing.
pub struct Hamiltonian {
    pub kinetic: OpSum,
    pub opposite_spin: OpSum,
    pub equal_spin: OpSum,
}

impl Hamiltonian {
    pub fn total(&self) -> OpSum {
        let mut o = self.kinetic.clone();
        o.extend(&self.opposite_spin, 1.0);
        o.extend(&self.equal_spin, 1.0);
        o
    }
}

pub fn hamiltonian(fock: &FockSpace, v: &TorusFunction) -> Hamiltonian {
    let mut kinetic = OpSum::new();
    for i in 0..fock.n_modes() {
        kinetic.add(fock.k2(i), vec![(i, true), (i, false)]);
    }
    let mut opposite_spin = OpSum::new();
    let mut equal_spin = OpSum::new();
    for s in 0..2 {
        for t in 0..2 {
            let target = if s == t { &mut equal_spin } else { &mut opposite_spin };
            integrate_pair(fock, v, &[fa(true, s, X, All), fa(true, t, Y, All), fa(false, t, Y, All), fa(false, s, X, All)], 0.5, target);
        }
    }
    Hamiltonian { kinetic, opposite_spin, equal_spin }
}

/// Correlation Hamiltonian pieces for kernel g.
pub struct CorrelationTerms {
    pub h0: OpSum,
    pub q2: OpSum,
    pub q3: OpSum,
    pub q4: OpSum,
    pub e_corr: [OpSum; 4],
}

impl CorrelationTerms {
    pub fn total(&self) -> OpSum {
        let mut o = self.h0.clone();
        for t in [&self.q2, &self.q3, &self.q4] {
            o.extend(t, 1.0);
        }
        for t in &self.e_corr {
            o.extend(t, 1.0);
        }
        o
    }

    pub fn named(&self) -> Vec<(&'static str, &OpSum)> {
        vec![
            ("H0", &self.h0),
            ("Q2", &self.q2),
            ("Q3", &self.q3),
            ("Q4", &self.q4),
            ("Ecorr1", &self.e_corr[0]),
            ("Ecorr2", &self.e_corr[1]),
            ("Ecorr3", &self.e_corr[2]),
            ("Ecorr4", &self.e_corr[3]),
        ]
    }
}

pub fn build_correlation_terms(fock: &FockSpace, g: &TorusFunction) -> CorrelationTerms {
    CorrelationTerms { h0: h0(fock), q2: q2(fock, g), q3: q3(fock, g), q4: q4(fock, g), e_corr: e_corr(fock, g) }
}

/// Particle-hole unitary as a signed permutation of basis states.
#[derive(Debug, Clone)]
pub struct ParticleHole {
    /// R |s> = sign[s] |target[s]>.
    pub target: Vec<u64>,
    pub sign: Vec<f64>,
}

impl ParticleHole {
    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        for (s, (t, g)) in self.target.iter().zip(&self.sign).enumerate() {
            m[(*t as usize, s)] = *g;
        }
        m
    }

    /// R^* psi.
    pub fn adjoint_apply(&self, psi: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(psi.len());
        for (s, (t, g)) in self.target.iter().zip(&self.sign).enumerate() {
            out[s] = g * psi[*t as usize];
        }
        out
    }
}

/// R = (-1)^n W_{j1} ... W_{jn} U P^n with W_j = a_j - a*_j over the n ball
/// modes in mode order, U the relabelling k -> -k of ball modes and P the
/// parity (-1)^N.
///
/// With these factors R Omega = Psi_FFG and R^* a*_k R = a*_k outside the
/// balls, R^* a*_k R = a_{-k} inside, with no extra signs.
pub fn particle_hole(fock: &FockSpace) -> Result<ParticleHole> {
    let ball: Vec<usize> = (0..fock.n_modes()).filter(|&i| fock.modes[i].in_fermi_ball).collect();
    let mut flip = vec![0usize; fock.n_modes()];
    for i in 0..fock.n_modes() {
        let m = fock.modes[i];
        flip[i] = if m.in_fermi_ball {
            fock.find(m.spin, [-m.k[0], -m.k[1], -m.k[2]])
                .ok_or_else(|| Error::Input(format!("mode set lacks -k for ball mode {:?}", m.k)))?
        } else {
            i
        };
    }
    let n = ball.len();
    let global = if n % 2 == 1 { -1.0 } else { 1.0 };
    let mut target = Vec::with_capacity(fock.dim);
    let mut sign = Vec::with_capacity(fock.dim);
    for s in 0..fock.dim as u64 {
        let occ: Vec<usize> = (0..fock.n_modes()).filter(|j| s & (1 << j) != 0).collect();
        let mut g = global;
        if n % 2 == 1 && occ.len() % 2 == 1 {
            g = -g;
        }
        // U: reorder flipped labels into ascending order
        let mut lab: Vec<usize> = occ.iter().map(|j| flip[*j]).collect();
        let mut swaps = 0;
        for i in 0..lab.len() {
            for j in 0..lab.len() - 1 - i {
                if lab[j] > lab[j + 1] {
                    lab.swap(j, j + 1);
                    swaps += 1;
                }
            }
        }
        if swaps % 2 == 1 {
            g = -g;
        }
        let mut state = lab.iter().fold(0u64, |acc, j| acc | (1 << j));
        for &j in ball.iter().rev() {
            let bit = 1u64 << j;
            if (state & (bit - 1)).count_ones() % 2 == 1 {
                g = -g;
            }
            if state & bit == 0 {
                g = -g;
            }
            state ^= bit;
        }
        target.push(state);
        sign.push(g);
    }
    Ok(ParticleHole { target, sign })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleHoleReport {
    pub vacuum_residual: f64,
    pub unitarity_residual: f64,
    /// Largest per-mode residual of the conjugation law.
    pub conjugation_residual: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn particle_hole_report(fock: &FockSpace, r: &ParticleHole) -> Result<ParticleHoleReport> {
    let rm = r.to_dense(fock.dim);
    let mut vac = DVector::zeros(fock.dim);
    vac[0] = 1.0;
    let mut ffg = DVector::zeros(fock.dim);
    ffg[fock.ffg_state() as usize] = 1.0;
    let vacuum_residual = (&rm * vac - ffg).amax();
    let unitarity_residual = max_abs(&(rm.transpose() * &rm - DMatrix::identity(fock.dim, fock.dim)));
    let mut conjugation_residual = 0.0f64;
    for i in 0..fock.n_modes() {
        let mut ad = OpSum::new();
        ad.add(1.0, vec![(i, true)]);
        let lhs = rm.transpose() * ad.to_dense(fock)? * &rm;
        let m = fock.modes[i];
        let mut expect = OpSum::new();
        if m.in_fermi_ball {
            let j = fock.find(m.spin, [-m.k[0], -m.k[1], -m.k[2]]).unwrap();
            expect.add(1.0, vec![(j, false)]);
        } else {
            expect.add(1.0, vec![(i, true)]);
        }
        conjugation_residual = conjugation_residual.max(max_abs(&(lhs - expect.to_dense(fock)?)));
    }
    Ok(ParticleHoleReport { vacuum_residual, unitarity_residual, conjugation_residual })
}

/// Number of spin-sigma particles inside / outside the ball.
fn ball_number(fock: &FockSpace, spin: usize, inside: bool) -> OpSum {
    let mut o = OpSum::new();
    for (i, m) in fock.modes.iter().enumerate() {
        if m.spin == spin && m.in_fermi_ball == inside {
            o.add(1.0, vec![(i, true), (i, false)]);
        }
    }
    o
}

/// max over spins of |N_in psi - N_out psi| and |N_in psi - N_sigma psi / 2|.
pub fn particle_hole_relation_check(fock: &FockSpace, psi: &DVector<f64>) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..2 {
        let nin = ball_number(fock, s, true).to_dense(fock)? * psi;
        let nout = ball_number(fock, s, false).to_dense(fock)? * psi;
        let total = &nin + &nout;
        worst = worst.max((&nin - &nout).norm()).max((&nin - total * 0.5).norm());
    }
    Ok(worst)
}

/// Worst relation residual over R^* applied to random states with the
/// Fermi-ball particle numbers.
pub fn relation_check_random(fock: &FockSpace, trials: usize, seed: u64) -> Result<f64> {
    let r = particle_hole(fock)?;
    let n = fock.ball_counts();
    let basis = fock.sector(n[0], n[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials.max(1) {
        let psi = random_state(fock, &basis, &mut rng);
        worst = worst.max(particle_hole_relation_check(fock, &r.adjoint_apply(&psi))?);
    }
    Ok(worst)
}

/// Projector onto states with as many particles as holes per spin.
pub fn particle_hole_projector(fock: &FockSpace) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(fock.dim, fock.dim);
    for s in 0..fock.dim as u64 {
        let ok = (0..2).all(|spin| {
            let (mut a, mut b) = (0, 0);
            for (i, m) in fock.modes.iter().enumerate() {
                if m.spin == spin && s & (1 << i) != 0 {
                    if m.in_fermi_ball {
                        a += 1;
                    } else {
                        b += 1;
                    }
                }
            }
            a == b
        });
        if ok {
            p[(s as usize, s as usize)] = 1.0;
        }
    }
    p
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VphiSquareReport {
    /// max |LHS - RHS| over matrix entries, pre-cancellation form.
    pub global_residual: f64,
    /// The same for the three ingredient identities (T square, S square, T S cross).
    pub t_square_residual: f64,
    pub s_square_residual: f64,
    pub cross_residual: f64,
    /// Quadratic leftovers projected on the particle-hole subspace.
    pub subspace_residual: f64,
    pub lhs_norm: f64,
}

/// The field A(x, y) = a(u_y) a(u_x) + T(x, y) + S(x, y) for spins (s, t),
/// as (coefficient, power of phi, factors).
fn square_field(s: usize, t: usize) -> Vec<(f64, usize, Vec<Factor>)> {
    vec![
        (1.0, 0, vec![fa(false, t, Y, U), fa(false, s, X, U)]),
        (1.0, 1, vec![fa(true, t, Y, V), fa(true, s, X, V)]),
        (1.0, 1, vec![fa(true, t, Y, V), fa(false, s, X, U)]),
        (-1.0, 1, vec![fa(true, s, X, V), fa(false, t, Y, U)]),
    ]
}

fn adjoint_factors(f: &[Factor]) -> Vec<Factor> {
    f.iter().rev().map(|x| Factor { dagger: !x.dagger, ..*x }).collect()
}

/// (1/2) sum int g_j |sum_{i in sel} A_i|^2 with kernel V phi^(p_i + p_i').
fn half_square(fock: &FockSpace, k: &Kernels, select: impl Fn(usize) -> bool + Copy) -> OpSum {
    let powers = [&k.v, &k.v_phi, &k.v_phi2];
    let mut o = OpSum::new();
    for (s, t) in OPP {
        let field = square_field(s, t);
        for (i, (ci, pi, fi)) in field.iter().enumerate() {
            if !select(i) {
                continue;
            }
            for (j, (cj, pj, fj)) in field.iter().enumerate() {
                if !select(j) {
                    continue;
                }
                let mut f = adjoint_factors(fi);
                f.extend_from_slice(fj);
                integrate_pair(fock, powers[pi + pj], &f, 0.5 * ci * cj, &mut o);
            }
        }
    }
    o
}

fn diff_residual(fock: &FockSpace, a: &OpSum, b: &OpSum) -> Result<f64> {
    Ok(max_abs(&(a.to_dense(fock)? - b.to_dense(fock)?)))
}

/// Completion of the square for V phi, checked as an operator identity.
pub fn verify_vphi_square_identity(fock: &FockSpace, k: &Kernels) -> Result<VphiSquareReport> {
    let vol = fock.l.powi(3);
    let counts = fock.ball_counts();
    let rho = [counts[0] as f64 / vol, counts[1] as f64 / vol];
    let int_vphi2 = k.v_phi2.integral();

    let mut lhs = q4(fock, &k.v);
    lhs.extend(&q2(fock, &k.v_phi), 1.0);
    lhs.extend(&q3(fock, &k.v_phi), 1.0);

    let mut q0 = OpSum::new();
    let mut e_s = OpSum::new();
    let mut e_ts = OpSum::new();
    let mut quad_v = OpSum::new();
    let mut quad_u = OpSum::new();
    for (s, t) in OPP {
        integrate_pair(fock, &k.v_phi2, &[fa(true, s, X, V), fa(true, t, Y, V), fa(false, t, Y, V), fa(false, s, X, V)], 0.5, &mut q0);
        integrate_pair(fock, &k.v_phi2, &[fa(true, s, X, U), fa(true, t, Y, V), fa(false, t, Y, V), fa(false, s, X, U)], -1.0, &mut e_s);
        integrate_pair(fock, &k.v_phi2, &[fa(true, s, X, U), fa(true, s, X, V), fa(false, t, Y, V), fa(false, t, Y, U)], 1.0, &mut e_s);
        integrate_pair(fock, &k.v_phi2, &[fa(true, t, Y, V), fa(false, s, X, V), fa(false, t, Y, V), fa(false, s, X, U)], 1.0, &mut e_ts);
        integrate_local(fock, &[fa(true, t, X, V), fa(false, t, X, V)], rho[s] * int_vphi2, &mut quad_v);
        integrate_local(fock, &[fa(true, s, X, U), fa(false, s, X, U)], rho[t] * int_vphi2, &mut quad_u);
    }

    // (1/2) int V |T|^2 = const + Q0 - quadratic(v)
    let t_sq = half_square(fock, k, |i| i == 1);
    let mut t_rhs = OpSum::identity(vol * rho[0] * rho[1] * int_vphi2);
    t_rhs.extend(&q0, 1.0);
    t_rhs.extend(&quad_v, -1.0);
    let t_square_residual = diff_residual(fock, &t_sq, &t_rhs)?;

    // (1/2) int V |S|^2 = quadratic(u) + E_S
    let s_sq = half_square(fock, k, |i| i >= 2);
    let mut s_rhs = quad_u.clone();
    s_rhs.extend(&e_s, 1.0);
    let s_square_residual = diff_residual(fock, &s_sq, &s_rhs)?;

    // (1/2) int V T^* S = E_TS
    let mut cross = OpSum::new();
    for (s, t) in OPP {
        let field = square_field(s, t);
        for j in 2..4 {
            let mut f = adjoint_factors(&field[1].2);
            f.extend_from_slice(&field[j].2);
            integrate_pair(fock, &k.v_phi2, &f, 0.5 * field[j].0, &mut cross);
        }
    }
    let cross_residual = diff_residual(fock, &cross, &e_ts)?;

    let mut rhs = half_square(fock, k, |_| true);
    rhs.extend(&OpSum::identity(-vol * rho[0] * rho[1] * int_vphi2), 1.0);
    rhs.extend(&q0, -1.0);
    rhs.extend(&quad_v, 1.0);
    rhs.extend(&quad_u, -1.0);
    rhs.extend(&e_s, -1.0);
    rhs.extend(&plus_hc(&e_ts), -1.0);
    let lhs_m = lhs.to_dense(fock)?;
    let global_residual = max_abs(&(&lhs_m - rhs.to_dense(fock)?));

    let p = particle_hole_projector(fock);
    let mut quad = quad_v.clone();
    quad.extend(&quad_u, -1.0);
    let subspace_residual = max_abs(&(&p * quad.to_dense(fock)? * &p));
    Ok(VphiSquareReport { global_residual, t_square_residual, s_square_residual, cross_residual, subspace_residual, lhs_norm: lhs_m.norm() })
}

/// Pauli-constrained index tuple for the T anticommutator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTuple {
    pub spin: usize,
    pub p: Mode,
    pub q: Mode,
    pub r: Mode,
    pub rp: Mode,
    pub s: Mode,
}

fn add(a: Mode, b: Mode) -> Mode {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn sub(a: Mode, b: Mode) -> Mode {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn neg(a: Mode) -> Mode {
    [-a[0], -a[1], -a[2]]
}

fn mode_of(fock: &FockSpace, spin: usize, k: Mode) -> Result<usize> {
    fock.find(spin, k).ok_or_else(|| Error::Input(format!("momentum {k:?} (spin {spin}) is not in the mode set")))
}

fn in_ball(fock: &FockSpace, spin: usize, k: Mode) -> bool {
    fock.find(spin, k).map(|i| fock.modes[i].in_fermi_ball).unwrap_or(false)
}

/// Residual of the six-operator anticommutator identity for one tuple.
pub fn verify_tt_anticommutator(fock: &FockSpace, t: &TTuple) -> Result<f64> {
    let (s1, s2) = (t.spin, 1 - t.spin);
    if !(in_ball(fock, s2, t.s) && in_ball(fock, s2, t.rp)) {
        return input("s and r' must lie in the Fermi ball of the other spin");
    }
    let (a_rp_p, a_s_q) = (sub(t.rp, t.p), sub(t.s, t.q));
    if in_ball(fock, s2, a_rp_p) || in_ball(fock, s2, a_s_q) {
        return input("r' - p and s - q must lie outside the Fermi ball");
    }
    let m1 = mode_of(fock, s1, sub(t.p, t.r))?;
    let m2 = mode_of(fock, s2, a_rp_p)?;
    let m3 = mode_of(fock, s2, neg(t.rp))?;
    let n1 = mode_of(fock, s2, neg(t.s))?;
    let n2 = mode_of(fock, s2, a_s_q)?;
    let n3 = mode_of(fock, s1, sub(t.q, t.r))?;
    let mut x = OpSum::new();
    x.add(1.0, vec![(m1, false), (m2, false), (m3, false)]);
    let mut y = OpSum::new();
    y.add(1.0, vec![(n1, true), (n2, true), (n3, true)]);
    let lhs = x.anticommutator(&y);

    let mut rhs = OpSum::new();
    let d_rs = t.rp == t.s;
    let d_pq = t.p == t.q;
    if d_rs && d_pq {
        rhs.add(1.0, vec![]);
        rhs.add(-1.0, vec![(m1, true), (m1, false)]);
        rhs.add(-1.0, vec![(m2, true), (m2, false)]);
        rhs.add(-1.0, vec![(m3, true), (m3, false)]);
    }
    if d_rs {
        let c = mode_of(fock, s2, sub(t.rp, t.q))?;
        rhs.add(1.0, vec![(c, true), (n3, true), (m1, false), (m2, false)]);
    }
    if a_rp_p == a_s_q {
        rhs.add(1.0, vec![(n1, true), (n3, true), (m1, false), (m3, false)]);
    }
    if d_pq {
        let c = mode_of(fock, s2, sub(t.s, t.p))?;
        rhs.add(1.0, vec![(n1, true), (c, true), (m2, false), (m3, false)]);
    }
    diff_residual(fock, &lhs, &rhs)
}

/// Every tuple satisfying the Pauli constraints with all six momenta present.
pub fn admissible_tuples(fock: &FockSpace, spin: usize) -> Vec<TTuple> {
    let s2 = 1 - spin;
    let ks = |sp: usize| -> Vec<Mode> { fock.modes.iter().filter(|m| m.spin == sp).map(|m| m.k).collect() };
    let ball2: Vec<Mode> = fock.modes.iter().filter(|m| m.spin == s2 && m.in_fermi_ball).map(|m| m.k).collect();
    let outside2: Vec<Mode> = fock.modes.iter().filter(|m| m.spin == s2 && !m.in_fermi_ball).map(|m| m.k).collect();
    let k1 = ks(spin);
    let mut out = Vec::new();
    for &rp in &ball2 {
        for &a in &outside2 {
            let p = sub(rp, a);
            for &s in &ball2 {
                for &b in &outside2 {
                    let q = sub(s, b);
                    for &c in &k1 {
                        let r = sub(p, c);
                        if fock.find(spin, sub(q, r)).is_some() && fock.find(s2, neg(rp)).is_some() && fock.find(s2, neg(s)).is_some() {
                            out.push(TTuple { spin, p, q, r, rp, s });
                        }
                    }
                }
            }
        }
    }
    out
}

/// n tuples drawn with replacement from the admissible tuples of both spins.
pub fn sample_tuples(fock: &FockSpace, n: usize, seed: u64) -> Result<Vec<TTuple>> {
    let all: Vec<TTuple> = (0..2).flat_map(|s| admissible_tuples(fock, s)).collect();
    if all.is_empty() {
        return input("the mode set admits no tuple satisfying the Pauli constraints");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| all[rng.random_range(0..all.len())]).collect())
}

/// Bethe-Goldstone type kernel and helpers on the mode set.
struct TKernel<'a> {
    fock: &'a FockSpace,
    phi: &'a TorusFunction,
    eps: f64,
    c: f64,
}

impl TKernel<'_> {
    fn u(&self, spin: usize, k: Mode) -> bool {
        self.fock.find(spin, k).map(|i| !self.fock.modes[i].in_fermi_ball).unwrap_or(false)
    }
    fn v(&self, spin: usize, k: Mode) -> bool {
        in_ball(self.fock, spin, k)
    }
    fn lam(&self, p: Mode, r: Mode) -> f64 {
        self.c * (norm2(add(r, p)) - norm2(r)) as f64
    }
    /// omega^eps_{r, r'}(p).
    fn omega(&self, r: Mode, rp: Mode, p: Mode) -> f64 {
        let num = 2.0 * self.c * norm2(p) as f64 * self.phi.get(p);
        num / (self.lam(p, r) + self.lam(neg(p), rp) + 2.0 * self.eps)
    }
    fn kin(&self, spin: usize, k: Mode) -> f64 {
        let kf = self.fock.k_f[spin];
        (self.c * norm2(k) as f64 - kf * kf).abs()
    }
    fn idx(&self, spin: usize, k: Mode) -> usize {
        self.fock.find(spin, k).unwrap()
    }
}

/// Candidate momenta: all differences of modes (a superset of every transfer).
fn transfers(fock: &FockSpace) -> Vec<Mode> {
    let mut t: Vec<Mode> = Vec::new();
    for a in &fock.modes {
        for b in &fock.modes {
            t.push(sub(a.k, b.k));
            t.push(add(a.k, b.k));
        }
    }
    t.sort();
    t.dedup();
    t
}

fn momenta(fock: &FockSpace) -> Vec<Mode> {
    let mut t: Vec<Mode> = fock.modes.iter().map(|m| m.k).collect();
    t.sort();
    t.dedup();
    t
}

/// T^*_sigma(r) as a cubic operator.
fn t_star(k: &TKernel, spin: usize, r: Mode) -> OpSum {
    let s2 = 1 - spin;
    let vol = k.fock.l.powi(3);
    let mut o = OpSum::new();
    for p in transfers(k.fock) {
        for rp in momenta(k.fock) {
            if !(k.u(s2, sub(rp, p)) && k.v(s2, rp)) {
                continue;
            }
            let a = sub(p, r);
            let mut coef = 0.0;
            if k.u(spin, a) && k.v(spin, r) {
                coef += k.omega(neg(r), rp, p);
            }
            if k.v(spin, sub(r, p)) && k.u(spin, r) {
                coef -= k.omega(sub(r, p), rp, p);
            }
            if coef != 0.0 {
                let ops = vec![(k.idx(spin, a), false), (k.idx(s2, sub(rp, p)), false), (k.idx(s2, neg(rp)), false)];
                o.add(coef / vol, ops);
            }
        }
    }
    o
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RrReport {
    pub residual: f64,
    pub lhs_norm: f64,
    /// Smallest and largest eigenvalue of each I_j, j = 1..10.
    pub extremes: Vec<(f64, f64)>,
}

/// The ten operators I_1 .. I_10.
fn rr_terms(k: &TKernel) -> Vec<OpSum> {
    let fock = k.fock;
    let vol6 = fock.l.powi(6);
    let mut terms = vec![OpSum::new(); 10];
    let ps = transfers(fock);
    let ks = momenta(fock);
    for (s, t) in OPP {
        for &p in &ps {
            for &r in &ks {
                for &rp in &ks {
                    let base = k.u(s, add(r, p)) && k.u(t, sub(rp, p)) && k.v(s, r) && k.v(t, rp);
                    if !base {
                        continue;
                    }
                    let w = k.omega(r, rp, p);
                    let lam = k.lam(p, r);
                    let w2 = w * w / vol6;
                    terms[0].add(lam * w2, vec![]);
                    let i = k.idx(t, neg(rp));
                    terms[1].add(-lam * w2, vec![(i, true), (i, false)]);
                    let i = k.idx(s, neg(r));
                    terms[2].add(-k.kin(s, add(r, p)) * w2, vec![(i, true), (i, false)]);
                    let i = k.idx(t, sub(rp, p));
                    terms[8].add(-lam * w2, vec![(i, true), (i, false)]);
                    let i = k.idx(s, add(r, p));
                    terms[9].add(-k.kin(s, r) * w2, vec![(i, true), (i, false)]);
                    for &q in &ps {
                        // I_4
                        let a = sub(add(r, p), q);
                        let b = add(sub(rp, p), q);
                        if k.v(s, a) && k.v(t, b) {
                            let c = k.kin(s, add(r, p)) * w * k.omega(a, b, q) / vol6;
                            let ops = vec![(k.idx(t, neg(b)), true), (k.idx(s, neg(a)), true), (k.idx(s, neg(r)), false), (k.idx(t, neg(rp)), false)];
                            terms[3].add(c, ops);
                        }
                        // I_5
                        if k.u(t, sub(rp, q)) && k.u(s, add(r, q)) {
                            let c = k.kin(s, r) * w * k.omega(r, rp, q) / vol6;
                            let ops = vec![(k.idx(t, sub(rp, q)), true), (k.idx(s, add(r, q)), true), (k.idx(s, add(r, p)), false), (k.idx(t, sub(rp, p)), false)];
                            terms[4].add(c, ops);
                        }
                        // I_7
                        if k.u(t, sub(rp, q)) && k.v(s, a) {
                            let c = k.kin(s, add(r, p)) * w * k.omega(a, rp, q) / vol6;
                            let ops = vec![(k.idx(t, sub(rp, q)), true), (k.idx(s, neg(a)), true), (k.idx(s, neg(r)), false), (k.idx(t, sub(rp, p)), false)];
                            terms[6].add(c, ops);
                        }
                        // I_8
                        if k.v(t, b) && k.u(s, add(r, q)) {
                            let c = k.kin(s, r) * w * k.omega(r, b, q) / vol6;
                            let ops = vec![(k.idx(t, neg(b)), true), (k.idx(s, add(r, q)), true), (k.idx(s, add(r, p)), false), (k.idx(t, neg(rp)), false)];
                            terms[7].add(c, ops);
                        }
                    }
                    // I_6
                    for &sm in &ks {
                        if k.v(t, sm) && k.u(t, sub(sm, p)) {
                            let c = lam * w * k.omega(r, sm, p) / vol6;
                            let ops = vec![(k.idx(t, neg(sm)), true), (k.idx(t, sub(sm, p)), true), (k.idx(t, sub(rp, p)), false), (k.idx(t, neg(rp)), false)];
                            terms[5].add(c, ops);
                        }
                    }
                }
            }
        }
    }
    terms
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym).eigenvalues;
    (e.min(), e.max())
}

/// sum_sigma sum_r ||r|^2 - k_F^2| {T^*, T} against the ten-term decomposition.
pub fn verify_rr_decomposition(fock: &FockSpace, phi: &TorusFunction, eps: f64) -> Result<RrReport> {
    if !(eps > 0.0) {
        return input(format!("eps must be positive, got {eps}"));
    }
    let k = TKernel { fock, phi, eps, c: fock.spacing().powi(2) };
    let mut lhs = OpSum::new();
    for spin in 0..2 {
        for r in momenta(fock) {
            if fock.find(spin, r).is_none() {
                continue;
            }
            let ts = t_star(&k, spin, r);
            lhs.extend(&ts.anticommutator(&ts.adjoint()), k.kin(spin, r));
        }
    }
    let terms = rr_terms(&k);
    let mut rhs = OpSum::new();
    for t in &terms {
        rhs.extend(t, 1.0);
    }
    let lhs_m = lhs.to_dense(fock)?;
    let residual = max_abs(&(&lhs_m - rhs.to_dense(fock)?));
    let extremes = terms.iter().map(|t| t.to_dense(fock).map(|m| eig_extremes(&m))).collect::<Result<Vec<_>>>()?;
    Ok(RrReport { residual, lhs_norm: lhs_m.norm(), extremes })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugationReport {
    pub min_gap: f64,
    /// max |gap - <Psi, equal-spin interaction Psi>| over trials.
    pub max_equal_spin_mismatch: f64,
    pub e_ffg: f64,
    pub trials: usize,
}

/// <Psi, H Psi> - E_FFG - <R^* Psi, H_corr R^* Psi> over random states with
/// the Fermi-ball particle numbers; the FFG state is always included.
pub fn conjugation_lower_bound_check(fock: &FockSpace, v: &TorusFunction, trials: usize, seed: u64) -> Result<ConjugationReport> {
    let h = hamiltonian(fock, v);
    let hm = h.total().to_dense(fock)?;
    let eq = h.equal_spin.to_dense(fock)?;
    let corr = build_correlation_terms(fock, v).total().to_dense(fock)?;
    let r = particle_hole(fock)?;
    let counts = fock.ball_counts();
    let vol = fock.l.powi(3);
    let kinetic: f64 = (0..fock.n_modes()).filter(|&i| fock.modes[i].in_fermi_ball).map(|i| fock.k2(i)).sum();
    let e_ffg = kinetic + v.get([0, 0, 0]) * (counts[0] * counts[1]) as f64 / vol;
    let basis = fock.sector(counts[0], counts[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_gap = f64::INFINITY;
    let mut mismatch = 0.0f64;
    for trial in 0..=trials {
        let mut psi = DVector::zeros(fock.dim);
        if trial == 0 {
            psi[fock.ffg_state() as usize] = 1.0;
        } else {
            for s in &basis {
                psi[*s as usize] = rng.random_range(-1.0..1.0);
            }
            let n = psi.norm();
            psi /= n;
        }
        let phi = r.adjoint_apply(&psi);
        let gap = psi.dot(&(&hm * &psi)) - e_ffg - phi.dot(&(&corr * &phi));
        let equal = psi.dot(&(&eq * &psi));
        min_gap = min_gap.min(gap);
        mismatch = mismatch.max((gap - equal).abs());
    }
    Ok(ConjugationReport { min_gap, max_equal_spin_mismatch: mismatch, e_ffg, trials })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorSpectrum {
    pub n_up: usize,
    pub n_down: usize,
    pub dim: usize,
    /// Up to four lowest eigenvalues, ascending.
    pub lowest: Vec<f64>,
}

/// Lowest eigenvalues of a number-conserving hermitian operator per sector.
pub fn tiny_ed(fock: &FockSpace, h: &OpSum) -> Result<Vec<SectorSpectrum>> {
    if !h.conserves_numbers(fock) {
        return input("operator does not conserve the particle number of each spin");
    }
    let m = [fock.spin_mask(0).count_ones() as usize, fock.spin_mask(1).count_ones() as usize];
    let mut out = Vec::new();
    for n_up in 0..=m[0] {
        for n_down in 0..=m[1] {
            let basis = fock.sector(n_up, n_down);
            let mat = h.to_sector(fock, &basis)?;
            let scale = mat.amax().max(1.0);
            if max_abs(&(&mat - mat.transpose())) > 1e-12 * scale {
                return input("operator is not hermitian");
            }
            let mut e: Vec<f64> = SymmetricEigen::new(mat).eigenvalues.iter().copied().collect();
            e.sort_by(f64::total_cmp);
            e.truncate(4);
            out.push(SectorSpectrum { n_up, n_down, dim: basis.len(), lowest: e });
        }
    }
    Ok(out)
}

/// Largest CAR residual over all mode pairs.
pub fn car_residual(fock: &FockSpace) -> Result<f64> {
    let n = fock.n_modes();
    let mut a = Vec::new();
    for i in 0..n {
        let mut o = OpSum::new();
        o.add(1.0, vec![(i, false)]);
        a.push(o.to_dense(fock)?);
    }
    let id = DMatrix::<f64>::identity(fock.dim, fock.dim);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let ad = a[j].transpose();
            let mixed = &a[i] * &ad + &ad * &a[i] - if i == j { id.clone() } else { DMatrix::zeros(fock.dim, fock.dim) };
            let pure = &a[i] * &a[j] + &a[j] * &a[i];
            worst = worst.max(max_abs(&mixed)).max(max_abs(&pure));
        }
    }
    Ok(worst)
}

/// Random normalized vector on the given basis states.
pub fn random_state(fock: &FockSpace, basis: &[u64], rng: &mut impl Rng) -> DVector<f64> {
    let mut psi = DVector::zeros(fock.dim);
    for s in basis {
        psi[*s as usize] = rng.random_range(-1.0..1.0);
    }
    let n = psi.norm();
    if n > 0.0 {
        psi /= n;
    }
    psi
}

/// Largest |k - k'|^2 over pairs of modes.
pub fn max_transfer(fock: &FockSpace) -> i64 {
    let mut m = 0;
    for a in &fock.modes {
        for b in &fock.modes {
            m = m.max(norm2(sub(a.k, b.k)));
        }
    }
    m
}

/// Ready-made tiny configurations.
pub mod presets {
    use super::*;
    use crate::hyformula::SpinDensities;
    use crate::lattice::build;
    use crate::scattering::{periodize, solve_zero_energy, GridSpec};

    pub struct Tiny {
        pub lattice: MomentumLattice,
        pub fock: FockSpace,
        pub kernels: Kernels,
    }

    /// Box side of the tiny presets.
    pub const L: f64 = 5.0;

    fn lattice_with_ball_at_origin() -> Result<MomentumLattice> {
        // k_F below one lattice spacing: each ball holds only k = 0
        let kf = 0.5 * 2.0 * std::f64::consts::PI / L;
        let rho = kf.powi(3) / (6.0 * std::f64::consts::PI.powi(2));
        build(L, &SpinDensities::new(rho, rho)?, 4.0 * 2.0 * std::f64::consts::PI / L)
    }

    fn kernels(lat: &MomentumLattice, fock: &FockSpace, pot: &RadialPotential) -> Result<Kernels> {
        let sol = solve_zero_energy(pot, &GridSpec::default())?;
        let m = max_transfer(fock);
        let pc = ((m + 1) as f64).sqrt() * 2.0 * std::f64::consts::PI / L;
        let per = periodize(&sol, L, lat.densities.total(), 0.1, pc)?;
        Kernels::new(pot, &per, m)
    }

    fn tiny(pot: &RadialPotential, sel: &[(usize, Mode)]) -> Result<Tiny> {
        let lattice = lattice_with_ball_at_origin()?;
        let fock = build_fock(&lattice, sel)?;
        let kernels = kernels(&lattice, &fock, pot)?;
        Ok(Tiny { lattice, fock, kernels })
    }

    /// Three modes per spin, up {0, e_x, -e_y}, down {0, -e_x, -e_x - e_y},
    /// balls = {0}; chosen so that Q2, Q3 and Q4 are all nonzero.
    pub fn prop34_tiny(pot: &RadialPotential) -> Result<Tiny> {
        let sel = [(0, [0, 0, 0]), (0, [1, 0, 0]), (0, [0, -1, 0]), (1, [0, 0, 0]), (1, [-1, 0, 0]), (1, [-1, -1, 0])];
        tiny(pot, &sel)
    }

    /// Explicit mode lists per spin; the Fermi balls hold only k = 0.
    pub fn custom(pot: &RadialPotential, up: &[Mode], down: &[Mode]) -> Result<Tiny> {
        let sel: Vec<(usize, Mode)> = up.iter().map(|k| (0, *k)).chain(down.iter().map(|k| (1, *k))).collect();
        tiny(pot, &sel)
    }

    /// Two modes per spin: up {0, -e_x}, down {0, +e_x}.
    pub fn rr_tiny(pot: &RadialPotential) -> Result<Tiny> {
        tiny(pot, &[(0, [0, 0, 0]), (0, [-1, 0, 0]), (1, [0, 0, 0]), (1, [1, 0, 0])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::RadialPotential;

    fn well() -> RadialPotential {
        RadialPotential::square_well(2.0, 1.0).unwrap()
    }

    #[test]
    fn car_holds() {
        let t = presets::prop34_tiny(&well()).unwrap();
        assert_eq!(t.fock.dim, 64);
        assert!(car_residual(&t.fock).unwrap() < 1e-13);
    }

    #[test]
    fn particle_hole_law_is_exact() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let r = particle_hole(&t.fock).unwrap();
        let rep = particle_hole_report(&t.fock, &r).unwrap();
        assert!(rep.vacuum_residual < 1e-14 && rep.unitarity_residual < 1e-14, "{rep:?}");
        assert!(rep.conjugation_residual < 1e-13, "{rep:?}");
    }

    #[test]
    fn torus_product_is_commutative() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let a = t.kernels.v.product(&t.kernels.phi);
        let b = t.kernels.phi.product(&t.kernels.v);
        for n in [[0, 0, 0], [1, 0, 0], [2, 1, 0], [3, 3, 1]] {
            assert!((a.get(n) - b.get(n)).abs() < 1e-14 * (1.0 + a.get(n).abs()));
        }
    }

    #[test]
    fn vphi_square_identity_holds() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let rep = verify_vphi_square_identity(&t.fock, &t.kernels).unwrap();
        eprintln!("{rep:?}");
        assert!(rep.lhs_norm > 1e-6);
        assert!(rep.t_square_residual < 1e-10 && rep.s_square_residual < 1e-10 && rep.cross_residual < 1e-10, "{rep:?}");
        assert!(rep.global_residual < 1e-10 && rep.subspace_residual < 1e-12, "{rep:?}");
    }

    #[test]
    fn tt_anticommutator_holds() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let mut n = 0;
        for spin in 0..2 {
            for tup in admissible_tuples(&t.fock, spin) {
                assert!(verify_tt_anticommutator(&t.fock, &tup).unwrap() < 1e-12, "{tup:?}");
                n += 1;
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn rr_decomposition_holds() {
        let t = presets::rr_tiny(&well()).unwrap();
        let rep = verify_rr_decomposition(&t.fock, &t.kernels.phi, 0.3).unwrap();
        eprintln!("{rep:?}");
        assert!(rep.lhs_norm > 1e-8);
        assert!(rep.residual < 1e-9 * rep.lhs_norm.max(1.0), "{rep:?}");
    }

    #[test]
    fn conjugation_gap_is_equal_spin_energy() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let rep = conjugation_lower_bound_check(&t.fock, &t.kernels.v, 100, 7).unwrap();
        eprintln!("{rep:?}");
        assert!(rep.min_gap > -1e-10 && rep.max_equal_spin_mismatch < 1e-10, "{rep:?}");
    }

    #[test]
    fn identities_hold_on_a_wider_mode_set() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let sel = vec![(0, [0, 0, 0]), (0, [1, 0, 0]), (0, [-1, 0, 0]), (0, [0, 1, 0]), (1, [0, 0, 0]), (1, [-1, 0, 0]), (1, [1, 1, 0]), (1, [0, -1, 0])];
        let fock = build_fock(&t.lattice, &sel).unwrap();
        let rep = verify_vphi_square_identity(&fock, &t.kernels).unwrap();
        assert!(rep.global_residual < 1e-10 * rep.lhs_norm.max(1.0), "{rep:?}");
        let rr = verify_rr_decomposition(&fock, &t.kernels.phi, 0.05).unwrap();
        eprintln!("{rr:?}");
        assert!(rr.lhs_norm > 1e-8 && rr.residual < 1e-9 * rr.lhs_norm.max(1.0), "{rr:?}");
        let c = conjugation_lower_bound_check(&fock, &t.kernels.v, 20, 3).unwrap();
        assert!(c.min_gap > -1e-10 && c.max_equal_spin_mismatch < 1e-10, "{c:?}");
        let n = (0..2).map(|s| admissible_tuples(&fock, s).len()).sum::<usize>();
        eprintln!("tuples {n}");
    }

    #[test]
    fn hamiltonian_conserves_spin_numbers() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let h = hamiltonian(&t.fock, &t.kernels.v).total().to_dense(&t.fock).unwrap();
        for s in 0..2 {
            let mut n = OpSum::new();
            for i in 0..t.fock.n_modes() {
                if t.fock.modes[i].spin == s {
                    n.add(1.0, vec![(i, true), (i, false)]);
                }
            }
            let n = n.to_dense(&t.fock).unwrap();
            assert!(max_abs(&(&h * &n - &n * &h)) < 1e-13);
        }
    }

    #[test]
    fn free_spectrum_is_sum_of_lowest_kinetic_energies() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let zero = TorusFunction::from_fn(t.fock.l, 0, |_| Ok(0.0)).unwrap();
        let spectrum = tiny_ed(&t.fock, &hamiltonian(&t.fock, &zero).total()).unwrap();
        assert_eq!(spectrum.len(), 16);
        let c = t.fock.k2(t.fock.find(0, [1, 0, 0]).unwrap());
        let s = spectrum.iter().find(|s| s.n_up == 2 && s.n_down == 1).unwrap();
        assert_eq!(s.dim, 9);
        assert!((s.lowest[0] - c).abs() < 1e-13);
        assert!(tiny_ed(&t.fock, &q4(&t.fock, &t.kernels.v)).is_ok());
        assert!(tiny_ed(&t.fock, &q2(&t.fock, &t.kernels.v)).is_err());
    }

    #[test]
    fn q3_display_matches_the_momentum_space_form() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let mut a = OpSum::new();
        for (s, u) in OPP {
            integrate_pair(&t.fock, &t.kernels.v, &[fa(true, s, X, U), fa(true, u, Y, U), fa(true, u, Y, V), fa(false, s, X, U)], 1.0, &mut a);
        }
        let alt = plus_hc(&a);
        let q = q3(&t.fock, &t.kernels.v);
        assert!(q.to_dense(&t.fock).unwrap().norm() > 1e-6);
        assert!(diff_residual(&t.fock, &q, &alt).unwrap() < 1e-14);
    }

    #[test]
    fn correlation_terms_have_the_expected_signs() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let c = build_correlation_terms(&t.fock, &t.kernels.v);
        for (name, op) in c.named() {
            let h = OperatorHandle::new(&t.fock, name, op).unwrap();
            assert!(h.hermitian, "{name}");
        }
        assert!(OperatorHandle::new(&t.fock, "Q4", &c.q4).unwrap().extremes().0 > -1e-10);
        // H0 spectrum: every subset sum of the single-mode energies
        let h0 = OperatorHandle::new(&t.fock, "H0", &c.h0).unwrap();
        let e: Vec<f64> = (0..t.fock.n_modes()).map(|i| (t.fock.k2(i) - t.fock.k_f[t.fock.modes[i].spin].powi(2)).abs()).collect();
        let mut want: Vec<f64> = (0..t.fock.dim).map(|s| (0..e.len()).filter(|i| s & (1 << i) != 0).map(|i| e[i]).sum()).collect();
        want.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = SymmetricEigen::new(h0.matrix.clone()).eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_potential_gives_vanishing_terms() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let zero = TorusFunction::from_fn(t.fock.l, 4, |_| Ok(0.0)).unwrap();
        let k = Kernels::from_parts(zero.clone(), t.kernels.phi.clone());
        let rep = verify_vphi_square_identity(&t.fock, &k).unwrap();
        assert_eq!(rep.lhs_norm, 0.0);
        let c = conjugation_lower_bound_check(&t.fock, &zero, 10, 1).unwrap();
        assert!(c.min_gap.abs() < 1e-13 && c.max_equal_spin_mismatch < 1e-13);
    }

    #[test]
    fn relation_check_accepts_images_and_rejects_others() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let r = particle_hole(&t.fock).unwrap();
        let mut vac = DVector::zeros(t.fock.dim);
        vac[0] = 1.0;
        assert_eq!(particle_hole_relation_check(&t.fock, &vac).unwrap(), 0.0);
        let n = t.fock.ball_counts();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = random_state(&t.fock, &t.fock.sector(n[0], n[1]), &mut rng);
        assert!(particle_hole_relation_check(&t.fock, &r.adjoint_apply(&psi)).unwrap() < 1e-12);
        let mut bad = DVector::zeros(t.fock.dim);
        bad[1 << t.fock.find(0, [1, 0, 0]).unwrap()] = 1.0;
        assert!(particle_hole_relation_check(&t.fock, &bad).unwrap() > 0.5);
    }

    #[test]
    fn ground_state_is_variational_and_monotone_in_v() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let zero = TorusFunction::from_fn(t.fock.l, 0, |_| Ok(0.0)).unwrap();
        let n = t.fock.ball_counts();
        let h = hamiltonian(&t.fock, &t.kernels.v).total();
        let e = tiny_ed(&t.fock, &h).unwrap();
        let e0 = tiny_ed(&t.fock, &hamiltonian(&t.fock, &zero).total()).unwrap();
        let ffg = t.fock.ffg_state();
        let hm = h.to_dense(&t.fock).unwrap();
        for (a, b) in e.iter().zip(&e0) {
            assert!(a.lowest[0] >= b.lowest[0] - 1e-12);
            if a.n_up == n[0] && a.n_down == n[1] {
                assert!(a.lowest[0] <= hm[(ffg as usize, ffg as usize)] + 1e-12);
            }
        }
    }

    #[test]
    fn verdicts_do_not_depend_on_input_order() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let mut sel: Vec<(usize, Mode)> = t.fock.modes.iter().map(|m| (m.spin, m.k)).collect();
        sel.reverse();
        let f2 = build_fock(&t.lattice, &sel).unwrap();
        let a = verify_vphi_square_identity(&t.fock, &t.kernels).unwrap();
        let b = verify_vphi_square_identity(&f2, &t.kernels).unwrap();
        assert_eq!(a.lhs_norm, b.lhs_norm);
        assert!(b.global_residual < 1e-10);
    }

    #[test]
    fn rr_terms_have_the_stated_signs() {
        let t = presets::rr_tiny(&well()).unwrap();
        let rep = verify_rr_decomposition(&t.fock, &t.kernels.phi, 0.3).unwrap();
        for (j, (lo, hi)) in rep.extremes.iter().enumerate() {
            if j >= 8 {
                assert!(*hi <= 1e-10, "I{}", j + 1);
            }
            if (3..8).contains(&j) {
                assert!(*lo >= -1e-10, "I{}", j + 1);
            }
        }
    }

    #[test]
    fn too_many_modes_is_a_resource_error() {
        let t = presets::prop34_tiny(&well()).unwrap();
        let sel: Vec<(usize, Mode)> = (0..2).flat_map(|s| (-4..5).map(move |x| (s, [x, 0, 0]))).collect();
        assert!(matches!(build_fock(&t.lattice, &sel), Err(Error::Resource(_))));
    }
}
