//! Gauss–Legendre quadrature at arbitrary precision.
//!
//! [`GaussLegendre`] computes nodes and weights on `[0, 1]` by Newton
//! iteration on the three-term Legendre recurrence, doubling the working
//! precision at each step. [`GradedRule`] tiles `[0, T]` with dyadic panels
//! that shrink toward `t = T`, where every decayed exponential
//! `e^{-r (T - t)}` concentrates. On a panel `[d, 2d]` the rule integrates
//! `e^{-r s}` to roughly `16^{-n}` relative to `1/r` whatever `r d` is, so the
//! error budget does not depend on the largest rate.

use rug::{Assign, Float};

/// Nodes and weights of the `n`-point rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<Float>,
    pub weights: Vec<Float>,
}

impl GaussLegendre {
    pub fn new(n: usize, prec: u32) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let half = n.div_ceil(2);
        let mut pos: Vec<(Float, Float)> = Vec::with_capacity(half);
        for i in 1..=half {
            let mut guess = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_f64(n, guess);
                let step = p / dp;
                guess -= step;
                if step.abs() <= 1e-15 * guess.abs().max(1e-3) {
                    break;
                }
            }
            let mut x = Float::with_val(53, guess);
            let mut p = 48u32;
            while p < prec {
                p = (2 * p).min(prec);
                x = Float::with_val(p, &x);
                newton_step(n, &mut x);
            }
            // Doubling leaves x accurate to the working precision; one extra
            // step absorbs the last rounding.
            for _ in 0..2 {
                let before = x.clone();
                newton_step(n, &mut x);
                let moved = Float::with_val(64, &x - &before).abs();
                if moved.is_zero() || moved.get_exp().unwrap_or(i32::MIN) < -(prec as i32) + 4 {
                    break;
                }
            }
            let (_, dp) = legendre(n, &x);
            let one_minus = Float::with_val(prec, 1) - Float::with_val(prec, x.square_ref());
            let w = Float::with_val(prec, 2) / (one_minus * dp.square());
            pos.push((x, w));
        }
        if n % 2 == 1 {
            let mid = pos.len() - 1;
            pos[mid].0 = Float::with_val(prec, 0);
        }
        // Map [-1, 1] to [0, 1]: y = (1 + x) / 2, weight w / 2, ascending in y.
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (x, w) in &pos {
            nodes.push((Float::with_val(prec, -x) + 1u32) / 2u32);
            weights.push(Float::with_val(prec, w / 2u32));
        }
        for (x, w) in pos.iter().rev().skip(n % 2) {
            nodes.push((Float::with_val(prec, x) + 1u32) / 2u32);
            weights.push(Float::with_val(prec, w / 2u32));
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn prec(&self) -> u32 {
        self.nodes[0].prec()
    }

    /// `∫_a^b f` with the rule mapped affinely onto `[a, b]`.
    pub fn integrate(&self, a: &Float, b: &Float, mut f: impl FnMut(&Float) -> Float) -> Float {
        let prec = self.prec();
        let h = Float::with_val(prec, b - a);
        let mut s = Float::with_val(prec, 0);
        for (y, w) in self.nodes.iter().zip(&self.weights) {
            let t = Float::with_val(prec, a + Float::with_val(prec, &h * y));
            s += Float::with_val(prec, w * f(&t));
        }
        s * h
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
///
/// Runs on `R_k = k! P_k`, which obeys `R_{k+1} = (2k+1) x R_k - k² R_{k-1}`
/// with integer coefficients, so each step is one full multiplication and no
/// division. The three buffers rotate in place.
fn legendre(n: usize, x: &Float) -> (Float, Float) {
    let prec = x.prec();
    if n == 0 {
        return (Float::with_val(prec, 1), Float::with_val(prec, 0));
    }
    let (r_n, r_prev) = scaled_legendre(n, x);
    // P_n = R_n / n!, P_n' = n (x P_n - P_{n-1}) / (x² - 1).
    let mut fact = Float::with_val(prec, 1);
    for k in 2..=n as u32 {
        fact *= k;
    }
    let p = Float::with_val(prec, &r_n / &fact);
    let xx = Float::with_val(prec, x.square_ref()) - 1u32;
    let dp = (Float::with_val(prec, x * &r_n) - Float::with_val(prec, &r_prev * n as u32)) / (fact / n as u32) / xx;
    (p, dp)
}

/// `(R_n, R_{n-1})` with `R_k = k! P_k(x)`.
fn scaled_legendre(n: usize, x: &Float) -> (Float, Float) {
    let prec = x.prec();
    let mut r0 = Float::with_val(prec, 1);
    let mut r1 = Float::with_val(prec, x);
    let mut t = Float::new(prec);
    for k in 1..n as u64 {
        t.assign(x * &r1);
        t *= 2 * k + 1;
        r0 *= k * k;
        t -= &r0;
        std::mem::swap(&mut r0, &mut r1);
        std::mem::swap(&mut r1, &mut t);
    }
    (r1, r0)
}

fn legendre_f64(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// `x ← x - P_n / P_n'`, written on the scaled recurrence so no factorial is
/// formed: `P_n / P_n' = R_n (x² - 1) / (n (x R_n - n R_{n-1}))`.
fn newton_step(n: usize, x: &mut Float) {
    let prec = x.prec();
    let (r_n, r_prev) = scaled_legendre(n, x);
    let xx = Float::with_val(prec, x.square_ref()) - 1u32;
    let mut den = Float::with_val(prec, &*x * &r_n) - Float::with_val(prec, &r_prev * n as u32);
    den *= n as u32;
    *x -= r_n * xx / den;
}

/// Composite rule on `[0, T]` with dyadic panels graded toward `t = T`.
///
/// In the distance variable `s = T - t` the panels are `[0, d]`,
/// `[d, 2d]`, `[2d, 4d]`, ..., `[T/2, T]` with `d = T / 2^P`, and `P` is the
/// smallest level making `d * max_rate <= 1`.
#[derive(Debug, Clone)]
pub struct GradedRule {
    horizon: Float,
    smallest: Float,
    levels: usize,
    base: GaussLegendre,
    prec: u32,
}

impl GradedRule {
    pub fn new(horizon: &Float, max_rate: &Float, nodes_per_panel: usize, prec: u32) -> Self {
        let mut levels = 0usize;
        let mut d = Float::with_val(prec, horizon);
        while Float::with_val(prec, &d * max_rate) > 1 && levels < 200 {
            d /= 2u32;
            levels += 1;
        }
        // Each dyadic level loses one bit to squaring; carry that many guards.
        let inner = prec + levels as u32 + 16;
        GradedRule {
            horizon: Float::with_val(inner, horizon),
            smallest: Float::with_val(inner, &d),
            levels,
            base: GaussLegendre::new(nodes_per_panel, inner),
            prec,
        }
    }

    pub fn panels(&self) -> usize {
        self.levels + 1
    }

    pub fn len(&self) -> usize {
        self.panels() * self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.base.len()
    }

    pub fn horizon(&self) -> &Float {
        &self.horizon
    }

    /// Distances `s_i = T - t_i` of all nodes, panel by panel.
    pub fn offsets(&self) -> Vec<Float> {
        let inner = self.base.prec();
        let mut out = Vec::with_capacity(self.len());
        for y in &self.base.nodes {
            out.push(Float::with_val(inner, &self.smallest * y));
        }
        let mut h = Float::with_val(inner, &self.smallest);
        for _ in 1..self.panels() {
            for y in &self.base.nodes {
                out.push(Float::with_val(inner, &h * (Float::with_val(inner, y) + 1u32)));
            }
            h *= 2u32;
        }
        out
    }

    /// Node times `t_i = T - s_i`.
    pub fn times(&self) -> Vec<Float> {
        self.offsets().into_iter().map(|s| Float::with_val(self.prec, &self.horizon - s)).collect()
    }

    pub fn weights(&self) -> Vec<Float> {
        let inner = self.base.prec();
        let mut out = Vec::with_capacity(self.len());
        for w in &self.base.weights {
            out.push(Float::with_val(self.prec, &self.smallest * w));
        }
        let mut h = Float::with_val(inner, &self.smallest);
        for _ in 1..self.panels() {
            for w in &self.base.weights {
                out.push(Float::with_val(self.prec, &h * w));
            }
            h *= 2u32;
        }
        out
    }

    /// `e^{-rate s_i}` at every node.
    ///
    /// Only the first panel needs fresh exponentials; the panel of width
    /// `2^p d` reuses them through `p` squarings.
    pub fn decay_table(&self, rate: &Float) -> Vec<Float> {
        let inner = self.base.prec();
        let mut out = Vec::with_capacity(self.len());
        let mut base: Vec<Float> = self
            .base
            .nodes
            .iter()
            .map(|y| {
                let arg = Float::with_val(inner, rate * &self.smallest) * y;
                (-arg).exp()
            })
            .collect();
        out.extend(base.iter().map(|v| Float::with_val(self.prec, v)));
        let mut shift = (-Float::with_val(inner, rate * &self.smallest)).exp();
        for _ in 1..self.panels() {
            for b in &base {
                out.push(Float::with_val(self.prec, &shift * b));
            }
            for b in base.iter_mut() {
                b.square_mut();
            }
            shift.square_mut();
        }
        out
    }

    /// `∫_0^T f(t) dt` from node values laid out like [`Self::offsets`].
    pub fn sum(&self, values: &[Float]) -> Float {
        let mut s = Float::with_val(self.prec, 0);
        for (v, w) in values.iter().zip(self.weights()) {
            s += Float::with_val(self.prec, v * w);
        }
        s
    }
}

/// Default node count per panel for an `n`-term exponential sum.
pub fn default_nodes(n_terms: usize) -> usize {
    4 * n_terms + 50
}

/// Affine `[0, 1]` rule evaluated on many panels of `[a, b]` in `f64`-free
/// arithmetic; used by the oscillatory integrals of the bilinear module.
pub fn composite(
    rule: &GaussLegendre,
    a: &Float,
    b: &Float,
    panels: usize,
    mut f: impl FnMut(&Float) -> Float,
) -> Float {
    let prec = rule.prec();
    let width = Float::with_val(prec, b - a) / panels as u32;
    let mut total = Float::with_val(prec, 0);
    for p in 0..panels {
        let lo = Float::with_val(prec, a + Float::with_val(prec, &width * p as u32));
        let hi = Float::with_val(prec, &lo + &width);
        total += rule.integrate(&lo, &hi, &mut f);
    }
    total
}
