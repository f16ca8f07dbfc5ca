//! Quadrature rules and compensated summation shared by the physics modules.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice, in slice order.
pub fn ksum(xs: &[f64]) -> f64 {
    let mut s = KahanSum::new();
    for &x in xs {
        s.add(x);
    }
    s.value()
}

/// Pairwise sum in a fixed tree shape; the result depends only on the slice.
pub fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => ksum(xs),
        n => {
            let mid = n / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        // recompute derivative at the converged node
        let (mut p1, mut p2) = (1.0, 0.0);
        for j in 0..n {
            let p3 = p2;
            p2 = p1;
            p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
        }
        if z * z != 1.0 {
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Cached Gauss-Legendre rule of a few standard orders.
pub fn gl_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static R5: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R12: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R24: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static R32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cell = match n {
        5 => &R5,
        8 => &R8,
        12 => &R12,
        16 => &R16,
        24 => &R24,
        32 => &R32,
        _ => panic!("gl_rule: unsupported order {n}"),
    };
    cell.get_or_init(|| gauss_legendre(n))
}

/// Fixed-order Gauss-Legendre on [a, b].
pub fn gl_integrate<F: FnMut(f64) -> f64>(n: usize, a: f64, b: f64, mut f: F) -> f64 {
    let (x, w) = gl_rule(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        s += wi * f(c + h * xi);
    }
    s * h
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss-Kronrod 7/15 panel: (kronrod estimate, |kronrod - gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = WGK[7] * fc;
    let mut rg = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        rk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

/// Chebyshev interpolant on [a, b].
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    c: Vec<f64>,
}

impl Chebyshev {
    /// Interpolate `f` at `n` Chebyshev points of the first kind.
    pub fn fit<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> Self {
        assert!(n >= 1 && b > a);
        let pi = std::f64::consts::PI;
        let fx: Vec<f64> = (0..n)
            .map(|k| {
                let t = (pi * (k as f64 + 0.5) / n as f64).cos();
                f(0.5 * (a + b) + 0.5 * (b - a) * t)
            })
            .collect();
        let c = (0..n)
            .map(|j| {
                let mut s = KahanSum::new();
                for (k, v) in fx.iter().enumerate() {
                    s.add(v * (pi * j as f64 * (k as f64 + 0.5) / n as f64).cos());
                }
                s.value() * if j == 0 { 1.0 } else { 2.0 } / n as f64
            })
            .collect();
        Self { a, b, c }
    }

    /// Drop trailing coefficients whose magnitude is below `tol` times the largest.
    pub fn truncated(mut self, tol: f64) -> Self {
        let big = self.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        while self.c.len() > 1 && self.c.last().unwrap().abs() <= tol * big {
            self.c.pop();
        }
        self
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    /// Magnitude of the last retained coefficient relative to the largest.
    pub fn tail_ratio(&self) -> f64 {
        let big = self.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if big == 0.0 {
            0.0
        } else {
            self.c.last().unwrap().abs() / big
        }
    }

    /// Clenshaw evaluation; `x` is clamped to [a, b].
    pub fn eval(&self, x: f64) -> f64 {
        let t = ((2.0 * x - self.a - self.b) / (self.b - self.a)).clamp(-1.0, 1.0);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &cj in self.c.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + cj;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.c[0]
    }

    /// Antiderivative vanishing at `a`.
    pub fn integral(&self) -> Self {
        let n = self.c.len();
        let h = 0.5 * (self.b - self.a);
        let get = |j: usize| if j < n { self.c[j] } else { 0.0 };
        let mut c = vec![0.0; n + 1];
        for j in 1..=n {
            let prev = if j == 1 { 2.0 * get(0) } else { get(j - 1) };
            c[j] = h * (prev - get(j + 1)) / (2.0 * j as f64);
        }
        let mut out = Self { a: self.a, b: self.b, c };
        out.c[0] -= out.eval(self.a);
        out
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

struct Panel {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss-Kronrod integration over the given breakpoints.
///
/// `points` must be increasing; each sub-interval is seeded as its own panel.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    rtol: f64,
    atol: f64,
    max_panels: usize,
) -> QuadResult {
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (val, err) = gk15(&mut f, w[0], w[1]);
            heap.push(Panel { a: w[0], b: w[1], val, err });
        }
    }
    let total = |h: &BinaryHeap<Panel>| {
        let mut v = KahanSum::new();
        let mut e = 0.0;
        for p in h.iter() {
            v.add(p.val);
            e += p.err;
        }
        (v.value(), e)
    };
    let (mut val, mut err) = total(&heap);
    let mut panels = heap.len();
    while err > atol.max(rtol * val.abs()) && panels < max_panels {
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            heap.push(p);
            break;
        }
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        val += v1 + v2 - p.val;
        err += e1 + e2 - p.err;
        heap.push(Panel { a: p.a, b: m, val: v1, err: e1 });
        heap.push(Panel { a: m, b: p.b, val: v2, err: e2 });
        panels += 1;
        if panels % 64 == 0 {
            (val, err) = total(&heap);
        }
    }
    let (value, error) = total(&heap);
    QuadResult { value, error, panels }
}

/// Least-squares fit of log(y) against log(x): (slope, intercept, r^2).
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in [5, 8, 16, 32] {
            let v = gl_integrate(n, 0.0, 2.0, |x| x.powi(2 * n as i32 - 1));
            let exact = 2f64.powi(2 * n as i32) / (2 * n) as f64;
            assert!((v - exact).abs() < 1e-12 * exact, "n={n}");
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = adaptive(|x: f64| x.sqrt().ln(), &[0.0, 1.0], 1e-10, 0.0, 2000);
        assert!((r.value + 0.5).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn chebyshev_interpolates_and_integrates() {
        let c = Chebyshev::fit(0.0, 2.0, 32, |x: f64| (x * 1.3).sin()).truncated(1e-16);
        for x in [0.0f64, 0.3, 1.1, 2.0] {
            assert!((c.eval(x) - (x * 1.3f64).sin()).abs() < 1e-14);
        }
        let ci = c.integral();
        for x in [0.0f64, 0.7, 2.0] {
            let exact = (1.0 - (1.3 * x).cos()) / 1.3;
            assert!((ci.eval(x) - exact).abs() < 1e-14, "{x}");
        }
    }

    #[test]
    fn tree_sum_is_order_fixed() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(tree_sum(&xs), tree_sum(&xs.clone()));
        assert!((tree_sum(&xs) - ksum(&xs)).abs() < 1e-12);
    }
}
