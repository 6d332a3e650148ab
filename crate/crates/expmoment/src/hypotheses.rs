//! Two-term Weyl fits, weak-gap certificates and the derived structural constants.
//!
//! Everything here is finite-range: a fit or certificate states the largest
//! threshold `Γ` (or index) it has been checked against.

use crate::mp;
use crate::spectra::{SpectraError, SpectralSequence, Spectrum};
use rayon::prelude::*;
use rug::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypothesesError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("zero gap between entries {index} and {next}", next = index + 1)]
    RepeatedValue { index: u64 },
    #[error("Weyl bounds cannot be met near Γ = {gamma}")]
    Unsatisfiable { gamma: String },
    #[error("exponents outside the supported regime: {0}")]
    Regime(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

/// Two-term Weyl constants fitted on `[μ₁, checked_up_to]`.
#[derive(Debug, Clone)]
pub struct WeylFit {
    pub a: Float,
    pub b: Float,
    pub c_w1: Float,
    pub c_w2: Float,
    pub k_w: Float,
    pub checked_up_to: Float,
    /// Number of entries `≤ checked_up_to`.
    pub checked_count: u64,
}

impl WeylFit {
    /// Whether `c₁Γ^a − c₂Γ^b ≤ n ≤ c₁Γ^a + c₂Γ^b`.
    pub fn bounds_hold(&self, gamma: &Float, n: u64) -> bool {
        let prec = gamma.prec().max(self.c_w1.prec());
        let main = Float::with_val(prec, &self.c_w1 * mp::powf(gamma, &self.a));
        let spread = Float::with_val(prec, &self.c_w2 * mp::powf(gamma, &self.b));
        let n = Float::with_val(prec, n);
        Float::with_val(prec, &main - &spread) <= n && n <= main + spread
    }

    /// `κ = K_W^a`.
    pub fn kappa(&self) -> Float {
        mp::powf(&self.k_w, &self.a)
    }
}

/// One side of a jump of the counting function: `N = count` at `Γ`, or in
/// the left limit at `Γ` when `count` is one less than `N(Γ)`.
#[derive(Debug, Clone)]
struct JumpPoint {
    gamma: Float,
    count: u64,
}

fn jump_points(values: &[Float], gamma_max: &Float) -> Vec<JumpPoint> {
    let mut pts = Vec::with_capacity(2 * values.len() + 1);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            pts.push(JumpPoint { gamma: v.clone(), count: i as u64 });
        }
        pts.push(JumpPoint { gamma: v.clone(), count: i as u64 + 1 });
    }
    if values.last().is_some_and(|last| last < gamma_max) {
        pts.push(JumpPoint { gamma: gamma_max.clone(), count: values.len() as u64 });
    }
    pts
}

/// Fits `(c_W1, c_W2, K_W)` on every jump point in `[μ₁, gamma_max]`.
///
/// Between jumps `N` is constant, `(Γ^a c₁ − N)/Γ^b` increases and
/// `(N − c₁Γ^a)/Γ^b` decreases, so both one-sided deviations peak at the
/// jumps themselves. `c_W1` minimizes the sup deviation by golden-section
/// search, `c_W2` is that sup rounded outward, and may be zero.
pub fn fit_weyl(seq: &dyn Spectrum, a: &Float, b: &Float, gamma_max: &Float) -> Result<WeylFit, HypothesesError> {
    if !(*b > 0 && b < a) {
        return Err(HypothesesError::Invalid("need 0 < b < a".into()));
    }
    let prec = seq.prec().max(a.prec());
    let mu1 = seq.value(1)?;
    if *gamma_max < mu1 {
        return Err(HypothesesError::Invalid("gamma_max lies below the first frequency".into()));
    }
    let n = seq.count_le(gamma_max)?;
    if let Some(len) = seq.len() {
        if n == len && seq.value(len)? < *gamma_max {
            return Err(HypothesesError::Invalid(format!(
                "the sequence ends at {} and does not cover gamma_max = {}",
                mp::to_decimal(&seq.value(len)?, 12),
                mp::to_decimal(gamma_max, 12)
            )));
        }
    }
    let values = seq.values(1, n as usize)?;
    let pts = jump_points(&values, gamma_max);

    let af = a.to_f64();
    let bf = b.to_f64();
    let xs: Vec<(f64, f64, f64)> = pts
        .iter()
        .map(|p| {
            let g = p.gamma.to_f64();
            (p.count as f64, g.powf(af), g.powf(bf))
        })
        .collect();
    let sup_dev = |c: f64| xs.iter().map(|&(n, ga, gb)| ((n - c * ga) / gb).abs()).fold(0.0, f64::max);
    let upper = xs.iter().map(|&(n, ga, _)| n / ga).fold(0.0, f64::max) * 2.0 + 1.0;
    let c1f = golden_min(sup_dev, 0.0, upper, 200);
    let c_w1 = Float::with_val(prec, c1f);

    let mut sup = Float::with_val(prec, 0);
    for p in &pts {
        let ga = mp::powf(&p.gamma, a);
        let gb = mp::powf(&p.gamma, b);
        let dev = Float::with_val(prec, Float::with_val(prec, p.count) - Float::with_val(prec, &c_w1 * &ga)).abs() / gb;
        if !dev.is_finite() {
            return Err(HypothesesError::Unsatisfiable { gamma: mp::to_decimal(&p.gamma, 12) });
        }
        if dev > sup {
            sup = dev;
        }
    }
    let c_w2 = if sup.is_zero() { sup } else { mp::round_up(sup) };
    let k_w = weyl_one_term_constant(&values, a, gamma_max);
    Ok(WeylFit { a: a.clone(), b: b.clone(), c_w1, c_w2, k_w, checked_up_to: gamma_max.clone(), checked_count: n })
}

/// Smallest `K` with `K⁻¹k^{1/a} ≤ μ_k ≤ K k^{1/a}` and
/// `K^{-a}Γ^a ≤ N(Γ) ≤ K^aΓ^a` on the range, rounded outward.
fn weyl_one_term_constant(values: &[Float], a: &Float, gamma_max: &Float) -> Float {
    let prec = values[0].prec().max(a.prec());
    let inv_a = Float::with_val(prec, a.recip_ref());
    let mut k_w = Float::with_val(prec, 1);
    let mut bump = |x: Float| {
        if x > k_w {
            k_w = x;
        }
    };
    for (i, v) in values.iter().enumerate() {
        let kp = mp::powf(&Float::with_val(prec, i as u64 + 1), &inv_a);
        bump(Float::with_val(prec, v / &kp));
        bump(Float::with_val(prec, &kp / v));
        // Just below the next jump N is still i + 1.
        let next = values.get(i + 1).unwrap_or(gamma_max);
        bump(Float::with_val(prec, next / &kp));
    }
    mp::round_up(k_w)
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Weak-gap constant: every checked `k` has `μ_{k+1} − μ_k ≥ exp(−c_w μ_k^{1/2})`.
#[derive(Debug, Clone)]
pub struct GapCertificate {
    pub c_w: Float,
    /// 1-based index `k` attaining the largest ratio.
    pub worst_index: u64,
    pub worst_ratio: Float,
    /// Largest `k` whose gap to `k + 1` was checked.
    pub checked_up_to: u64,
}

impl GapCertificate {
    /// `ln(μ_{k+1} − μ_k) + c_w μ_k^{1/2}` for one gap; nonnegative when it holds.
    pub fn margin(&self, mu_k: &Float, mu_next: &Float) -> Float {
        let prec = mu_k.prec();
        let gap = Float::with_val(prec, mu_next - mu_k);
        gap.ln() + Float::with_val(prec, &self.c_w * Float::with_val(prec, mu_k.sqrt_ref()))
    }
}

/// `c_w = max_k (−ln(μ_{k+1} − μ_k)) / μ_k^{1/2}`, clamped below at zero.
pub fn check_weak_gap(seq: &SpectralSequence) -> Result<GapCertificate, HypothesesError> {
    weak_gap_over(seq.values_slice(), 1)
}

/// [`check_weak_gap`] over a contiguous window whose first entry has index `first_index`.
pub fn weak_gap_over(values: &[Float], first_index: u64) -> Result<GapCertificate, HypothesesError> {
    if values.len() < 2 {
        return Err(HypothesesError::Invalid("a weak-gap check needs at least two entries".into()));
    }
    let prec = values[0].prec();
    let mut worst = Float::with_val(prec, f64::NEG_INFINITY);
    let mut worst_index = first_index;
    for (i, w) in values.windows(2).enumerate() {
        let gap = Float::with_val(prec, &w[1] - &w[0]);
        if gap <= 0 {
            return Err(HypothesesError::RepeatedValue { index: first_index + i as u64 });
        }
        let ratio = Float::with_val(prec, -gap.ln()) / Float::with_val(prec, w[0].sqrt_ref());
        if ratio > worst {
            worst = ratio;
            worst_index = first_index + i as u64;
        }
    }
    let c_w = if worst > 0 { mp::round_up(worst.clone()) } else { Float::with_val(prec, 0) };
    Ok(GapCertificate { c_w, worst_index, worst_ratio: worst, checked_up_to: first_index + values.len() as u64 - 2 })
}

/// Which pipeline a pair of exponents belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `1/2 ≤ a < 5/8`, `0 < b < 1/2`: cost exponent `α_{ε,δ}`.
    Alpha,
    /// `0 < a < 1/2`: densified sequences, cost exponent `β_{a,δ}`.
    Beta,
}

/// Classifies `(a, b)` or rejects it.
pub fn regime(a: &Float, b: &Float) -> Result<Regime, HypothesesError> {
    if !(*b > 0 && b < a) {
        return Err(HypothesesError::Regime("need 0 < b < a".into()));
    }
    if *a >= 0.5 && *a < 0.625 {
        if *b >= 0.5 {
            return Err(HypothesesError::Regime("need b < 1/2".into()));
        }
        Ok(Regime::Alpha)
    } else if *a < 0.5 {
        Ok(Regime::Beta)
    } else {
        Err(HypothesesError::Regime(format!("a = {} is not below 5/8", mp::to_decimal(a, 10))))
    }
}

/// Constants derived from a Weyl fit.
#[derive(Debug, Clone)]
pub struct StructuralConstants {
    pub a: Float,
    pub b: Float,
    pub epsilon: Float,
    pub lambda_0: Float,
    pub theta: Float,
    pub k_star: u64,
    pub mu_k_star: Float,
    pub kappa: Float,
    pub k_w: Float,
    pub c_w1: Float,
    pub c_w2: Float,
    pub mu1: Float,
    pub alpha: Float,
    pub beta: Option<Float>,
    pub delta: Float,
}

/// `k* = ⌊(c_W2 K_W^{a+b}/c_W1)^{a/(a−b)}⌋ + 1`.
pub fn k_star(fit: &WeylFit) -> Result<u64, HypothesesError> {
    let prec = fit.c_w1.prec();
    if fit.c_w2.is_zero() {
        return Ok(1);
    }
    let ab = Float::with_val(prec, &fit.a + &fit.b);
    let base = Float::with_val(prec, &fit.c_w2 * mp::powf(&fit.k_w, &ab)) / &fit.c_w1;
    let exp = Float::with_val(prec, &fit.a / Float::with_val(prec, &fit.a - &fit.b));
    let v = mp::powf(&base, &exp);
    mp::floor_u64(&v)
        .and_then(|f| f.checked_add(1))
        .ok_or_else(|| HypothesesError::Invalid(format!("k* = {} does not fit in 64 bits", mp::to_decimal(&v, 6))))
}

/// `ε = min((5 − 8a)/4, (1 − 2b)/4)`.
pub fn epsilon(a: &Float, b: &Float) -> Float {
    let prec = a.prec();
    let e1 = (Float::with_val(prec, 5) - Float::with_val(prec, a * 8u32)) / 4u32;
    let e2 = (Float::with_val(prec, 1) - Float::with_val(prec, b * 2u32)) / 4u32;
    e1.min(&e2)
}

/// `α_{ε,δ} = max((1 − ε)/ε, (1 − δ)/δ)`.
pub fn alpha(eps: &Float, delta: &Float) -> Float {
    let prec = eps.prec().max(delta.prec());
    let x = Float::with_val(prec, 1 - eps.clone()) / eps;
    let y = Float::with_val(prec, 1 - delta.clone()) / delta;
    x.max(&y)
}

/// `β_{a,δ} = max(4/(a(1 − 2a)), (1 − δ)/δ)` for `0 < a < 1/2`.
pub fn beta(a: &Float, delta: &Float) -> Option<Float> {
    if !(*a > 0 && *a < 0.5) {
        return None;
    }
    let prec = a.prec().max(delta.prec());
    let one_m2a = Float::with_val(prec, 1) - Float::with_val(prec, a * 2u32);
    let x = Float::with_val(prec, 4) / Float::with_val(prec, a * &one_m2a);
    let y = Float::with_val(prec, 1 - delta.clone()) / delta;
    Some(x.max(&y))
}

/// All derived constants; `mu_k_star` must be `μ_{k*}` read from the sequence.
pub fn structural_constants(
    fit: &WeylFit,
    mu1: &Float,
    mu_k_star: &Float,
    delta: &Float,
) -> Result<StructuralConstants, HypothesesError> {
    if !(fit.a > 0 && fit.a < 0.625) {
        return Err(HypothesesError::Regime(format!("a = {} is outside (0, 5/8)", mp::to_decimal(&fit.a, 10))));
    }
    if !(*delta > 0 && *delta < 1) {
        return Err(HypothesesError::Invalid("δ must lie in (0, 1)".into()));
    }
    let prec = fit.c_w1.prec().max(mu1.prec());
    let (a, b, k_w) = (&fit.a, &fit.b, &fit.k_w);
    let eps = epsilon(a, b);
    let ks = k_star(fit)?;
    let kappa = mp::powf(k_w, a);
    let one_m2b = Float::with_val(prec, 1) - Float::with_val(prec, b * 2u32);
    let term2_base = Float::with_val(prec, &kappa * &fit.c_w1) * &fit.c_w2 * 8u32;
    let term2 =
        if term2_base.is_zero() { term2_base } else { mp::powf(&term2_base, &(Float::with_val(prec, 4) / &one_m2b)) };
    let term3 = mp::powf(&(Float::with_val(prec, k_w * mu_k_star) * 2u32), &Float::with_val(prec, a * 4u32));
    let lambda_0 = Float::with_val(prec, mu1 + &term2) + &term3;

    let one_m2a = Float::with_val(prec, 1) - Float::with_val(prec, a * 2u32);
    let sum = Float::with_val(prec, &fit.c_w1 + &fit.c_w2);
    let inner = Float::with_val(prec, &kappa * 2u32) + Float::with_val(prec, kappa.square_ref());
    let branch1 = mp::powf(&inner, &Float::with_val(prec, &one_m2a / 2u32)) / (sum.square() * 4u32);
    let branch2 = Float::with_val(prec, 1) / (Float::with_val(prec, k_w * ks) * 8u32);
    let branch3 = Float::with_val(prec, kappa.square_ref()).recip();
    let theta = branch1.min(&branch2).min(&branch3);

    Ok(StructuralConstants {
        a: a.clone(),
        b: b.clone(),
        alpha: alpha(&eps, delta),
        beta: beta(a, delta),
        epsilon: eps,
        lambda_0,
        theta,
        k_star: ks,
        mu_k_star: mu_k_star.clone(),
        kappa,
        k_w: k_w.clone(),
        c_w1: fit.c_w1.clone(),
        c_w2: fit.c_w2.clone(),
        mu1: mu1.clone(),
        delta: delta.clone(),
    })
}

/// Truncated condensation estimates `ln(1/|E′(μ_k)|)/μ_k` for `k ≤ n_terms`,
/// with `E′(μ_k) = (−2/μ_k)·Π_{j≠k, j≤n_terms}(1 − μ_k²/μ_j²)`.
///
/// Each factor is formed as `(μ_j − μ_k)(μ_j + μ_k)/μ_j²` so that close
/// neighbours keep full relative accuracy; the product is accumulated as a
/// Float, whose exponent range cannot overflow here, and logged once.
pub fn estimate_condensation_index(
    seq: &SpectralSequence,
    n_terms: usize,
) -> Result<Vec<(usize, Float)>, HypothesesError> {
    let vals = seq.values_slice();
    if n_terms == 0 || n_terms > vals.len() {
        return Err(HypothesesError::Invalid(format!(
            "n_terms = {n_terms} must lie in 1..={} (the sequence length)",
            vals.len()
        )));
    }
    let vals = &vals[..n_terms];
    let prec = seq.prec();
    Ok((0..n_terms)
        .into_par_iter()
        .map(|k| {
            let mk = &vals[k];
            let mut prod = Float::with_val(prec, 2) / mk;
            for (j, mj) in vals.iter().enumerate() {
                if j == k {
                    continue;
                }
                let d = Float::with_val(prec, mj - mk);
                let s = Float::with_val(prec, mj + mk);
                prod *= d * s;
                prod /= Float::with_val(prec, mj.square_ref());
            }
            let est = -prod.abs().ln() / mk;
            (k + 1, est)
        })
        .collect())
}
