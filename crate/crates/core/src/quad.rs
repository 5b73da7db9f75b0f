//! Gauss-Legendre rules and Chebyshev interpolation.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

/// Composite Gauss rule: `panels` equal panels on [a, b], `order` nodes each.
pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(order);
    let width = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let hi = if p + 1 == panels { b } else { lo + width };
        out.extend(rule.mapped(lo, hi));
    }
    out
}

/// Chebyshev interpolant of a complex-valued function on [a, b].
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Chebyshev {
    /// Interpolates `f` at `n` Chebyshev points of the first kind.
    pub fn fit<F: FnMut(f64) -> (f64, f64)>(a: f64, b: f64, n: usize, mut f: F) -> Self {
        let nf = n as f64;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let theta = PI * (j as f64 + 0.5) / nf;
                let x = 0.5 * (a + b) + 0.5 * (b - a) * theta.cos();
                f(x)
            })
            .collect();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (j, &(vr, vi)) in samples.iter().enumerate() {
                let c = (PI * k as f64 * (j as f64 + 0.5) / nf).cos();
                sr += vr * c;
                si += vi * c;
            }
            let scale = if k == 0 { 1.0 / nf } else { 2.0 / nf };
            re[k] = sr * scale;
            im[k] = si * scale;
        }
        Self { a, b, re, im }
    }

    pub fn eval(&self, x: f64) -> (f64, f64) {
        let u = (2.0 * x - self.a - self.b) / (self.b - self.a);
        (clenshaw(&self.re, u), clenshaw(&self.im, u))
    }

    /// Magnitude of the trailing coefficients, a cheap accuracy indicator.
    pub fn tail(&self) -> f64 {
        let n = self.re.len();
        let k0 = n.saturating_sub(3);
        (k0..n).map(|k| self.re[k].abs() + self.im[k].abs()).sum()
    }
}

fn clenshaw(c: &[f64], u: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * u * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    u * b1 - b2 + c.first().copied().unwrap_or(0.0)
}
