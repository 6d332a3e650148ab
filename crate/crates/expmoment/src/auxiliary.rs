//! The auxiliary sequence `ν` and executable certificates for its gap structure.
//!
//! Below the cutoff `Λ` the sequence follows `μ`; above it, `μ` is replaced by
//! the quadratic ramp `κ²Λ^{1−2a}k²`. Certificates report the worst signed
//! margin over a finite index range, so a near-failure is visible before it
//! becomes a failure.

use crate::hypotheses::{StructuralConstants, WeylFit};
use crate::mp;
use crate::spectra::{SpectraError, Spectrum};
use rug::Float;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuxiliaryError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("precision too low: Λ needs at least {needed} bits, the base sequence has {have}")]
    Precision { needed: u32, have: u32 },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
}

/// Number of indices on each side of `k*_Λ` inspected by the transition checks.
pub const TRANSITION_WINDOW: u64 = 64;

/// Bits needed to resolve unit gaps among values of size `Λ²`.
pub fn auxiliary_precision(lambda: &Float, base_prec: u32) -> u32 {
    let log2 = lambda.get_exp().unwrap_or(0).max(0) as u32;
    base_prec.max(2 * log2 + 96)
}

/// `ν_k = μ_k` for `k ≤ k*_Λ`, `κ²Λ^{1−2a}k²` beyond.
#[derive(Clone)]
pub struct AuxiliarySequence {
    base: Arc<dyn Spectrum>,
    pub lambda_cut: Float,
    pub a: Float,
    pub kappa: Float,
    /// `κ²Λ^{1−2a}`.
    pub ramp: Float,
    /// Largest `k` with `μ_k ≤ Λ`.
    pub k_star_lambda: u64,
    /// False when a finite base ends before exceeding `Λ`, so `k*_Λ` is only a lower bound.
    pub k_star_exact: bool,
    /// `ν_1, …, ν_range`.
    pub values: Vec<Float>,
    /// `μ` around `k*_Λ` as `(first index, values)`, fetched once at build time.
    pub transition: (u64, Vec<Float>),
    pub monotonicity: Certificate,
}

impl std::fmt::Debug for AuxiliarySequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuxiliarySequence")
            .field("base", &self.base.tag())
            .field("lambda_cut", &self.lambda_cut)
            .field("k_star_lambda", &self.k_star_lambda)
            .field("range", &self.values.len())
            .finish()
    }
}

impl AuxiliarySequence {
    pub fn base(&self) -> &dyn Spectrum {
        self.base.as_ref()
    }

    pub fn prec(&self) -> u32 {
        self.base.prec()
    }

    fn ramp_value(&self, k: u64) -> Float {
        let kk = Float::with_val(self.prec(), k);
        Float::with_val(self.prec(), &self.ramp * kk.square())
    }

    /// `ν_k` for any `k ≥ 1`.
    pub fn nu(&self, k: u64) -> Result<Float, AuxiliaryError> {
        if k <= self.k_star_lambda {
            Ok(self.base.value(k)?)
        } else if self.k_star_exact {
            Ok(self.ramp_value(k))
        } else {
            Err(SpectraError::OutOfRange { index: k, len: self.k_star_lambda }.into())
        }
    }

    /// `ν_start, …, ν_{start+count−1}`.
    pub fn nu_window(&self, start: u64, count: usize) -> Result<Vec<Float>, AuxiliaryError> {
        let end = start + count as u64;
        let mut out = Vec::with_capacity(count);
        if start <= self.k_star_lambda {
            let below = (self.k_star_lambda + 1).min(end) - start;
            out.extend(self.base.values(start, below as usize)?);
        }
        for k in start.max(self.k_star_lambda + 1)..end {
            out.push(self.nu(k)?);
        }
        Ok(out)
    }
}

/// Builds `ν` for cutoff `lambda_cut` and materializes its first `range` entries.
pub fn build_auxiliary(
    base: Arc<dyn Spectrum>,
    fit: &WeylFit,
    lambda_cut: &Float,
    range: usize,
) -> Result<AuxiliarySequence, AuxiliaryError> {
    let mu1 = base.value(1)?;
    if *lambda_cut < mu1 {
        return Err(AuxiliaryError::Invalid("the cutoff Λ must be at least μ₁".into()));
    }
    if fit.a < 0.5 {
        return Err(AuxiliaryError::Invalid("the ramp comparison needs a ≥ 1/2".into()));
    }
    if range == 0 {
        return Err(AuxiliaryError::Invalid("range must be at least 1".into()));
    }
    let needed = auxiliary_precision(lambda_cut, 0);
    if base.prec() < needed {
        return Err(AuxiliaryError::Precision { needed, have: base.prec() });
    }
    let prec = base.prec();
    let lambda = Float::with_val(prec, lambda_cut);
    let kappa = Float::with_val(prec, fit.kappa());
    let one_m2a = Float::with_val(prec, 1) - Float::with_val(prec, &fit.a * 2u32);
    let ramp = Float::with_val(prec, kappa.square_ref()) * pow_signed(&lambda, &one_m2a);
    let (k_star, t_start, t_values) = base.window_around(&lambda, TRANSITION_WINDOW, TRANSITION_WINDOW)?;
    let k_star_exact = base.len().is_none_or(|len| k_star < len);
    let mut aux = AuxiliarySequence {
        base,
        lambda_cut: lambda,
        a: Float::with_val(prec, &fit.a),
        kappa,
        ramp,
        k_star_lambda: k_star,
        k_star_exact,
        values: Vec::new(),
        transition: (t_start, t_values),
        monotonicity: Certificate::inconclusive("monotonicity", (1, 1), "not yet checked"),
    };
    let available = if k_star_exact { range as u64 } else { (range as u64).min(k_star) };
    aux.values = aux.nu_window(1, available as usize)?;
    aux.monotonicity = monotonicity_certificate(&aux);
    Ok(aux)
}

fn pow_signed(x: &Float, p: &Float) -> Float {
    if p.is_zero() {
        Float::with_val(x.prec(), 1)
    } else {
        Float::with_val(x.prec(), rug::ops::Pow::pow(x, p))
    }
}

/// `n_Λ` and `γ_Λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGapParams {
    pub n_lambda: u64,
    pub gamma_lambda: Float,
}

/// `n_Λ = ⌊Λ^{(1−2ε)/2}⌋ + 1`, `γ_Λ = θΛ^{1−2a}`.
pub fn block_gap_parameters(
    consts: &StructuralConstants,
    lambda_cut: &Float,
) -> Result<BlockGapParams, AuxiliaryError> {
    if *lambda_cut <= 0 {
        return Err(AuxiliaryError::Invalid("Λ must be positive".into()));
    }
    let prec = lambda_cut.prec().max(consts.theta.prec());
    let one_m2e = Float::with_val(prec, 1) - Float::with_val(prec, &consts.epsilon * 2u32);
    let e = one_m2e / 2u32;
    let n = mp::floor_u64(&pow_signed(lambda_cut, &e))
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| AuxiliaryError::Invalid("n_Λ does not fit in 64 bits".into()))?;
    let one_m2a = Float::with_val(prec, 1) - Float::with_val(prec, &consts.a * 2u32);
    let gamma_lambda = Float::with_val(prec, &consts.theta * pow_signed(lambda_cut, &one_m2a));
    Ok(BlockGapParams { n_lambda: n, gamma_lambda })
}

/// `c₀ = sup_{x≥1} x^{−1/2} ln(κ^{−2} x^{2a−1})` in closed form.
///
/// With `y = ln x` the objective is `e^{−y/2}((2a−1)y − 2 ln κ)`, whose only
/// stationary point is `y* = 2 + 2 ln κ/(2a−1)`, where it equals
/// `2(2a−1)e^{−1−ln κ/(2a−1)}`. When `y* < 0` the sup sits at `x = 1`. For
/// `a = 1/2` the objective is `−2 ln κ · x^{−1/2}`, with sup `max(0, −2 ln κ)`.
pub fn c0(a: &Float, kappa: &Float) -> Float {
    let prec = a.prec().max(kappa.prec());
    let ln_k = Float::with_val(prec, kappa.ln_ref());
    let at_one = Float::with_val(prec, -&ln_k) * 2u32;
    let s = Float::with_val(prec, a * 2u32) - 1u32;
    if s.is_zero() {
        return at_one.max(&Float::with_val(prec, 0));
    }
    let y_star = Float::with_val(prec, &ln_k * 2u32) / &s + 2u32;
    if y_star < 0 {
        return at_one;
    }
    let e = Float::with_val(prec, -1) - Float::with_val(prec, &ln_k / &s);
    Float::with_val(prec, &s * 2u32) * e.exp()
}

/// `c₁ = ½min(K_W^{−2a}, K_W^{−a})`, `c₂ = 2max(K_W^a, K_W^{−a})`.
pub fn counting_constants(kappa: &Float) -> (Float, Float) {
    let prec = kappa.prec();
    let inv = Float::with_val(prec, kappa.recip_ref());
    let inv2 = Float::with_val(prec, inv.square_ref());
    let c1 = inv2.min(&inv) / 2u32;
    let c2 = Float::with_val(prec, kappa.clone().max(&inv)) * 2u32;
    (c1, c2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    Passed,
    Failed,
    Inconclusive,
}

/// Pass/fail record with the worst signed margin over the checked indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub name: String,
    /// Inclusive index interval.
    pub checked_range: (u64, u64),
    pub status: CertificateStatus,
    pub passed: bool,
    pub worst_margin: Float,
    pub witness_index: u64,
    /// False when Λ lies below Λ₀, where a failure is not a contradiction.
    pub within_guarantee: bool,
    pub note: String,
}

impl Certificate {
    fn inconclusive(name: &str, range: (u64, u64), note: &str) -> Self {
        Certificate {
            name: name.into(),
            checked_range: range,
            status: CertificateStatus::Inconclusive,
            passed: false,
            worst_margin: Float::with_val(64, f64::NAN),
            witness_index: 0,
            within_guarantee: true,
            note: note.into(),
        }
    }
}

/// Running minimum of signed margins.
struct Worst {
    margin: Option<Float>,
    index: u64,
}

impl Worst {
    fn new() -> Self {
        Worst { margin: None, index: 0 }
    }

    fn push(&mut self, m: Float, k: u64) {
        if self.margin.as_ref().is_none_or(|w| m < *w || m.is_nan()) {
            self.margin = Some(m);
            self.index = k;
        }
    }

    fn finish(self, name: &str, range: (u64, u64), within: bool, note: String) -> Certificate {
        match self.margin {
            None => Certificate::inconclusive(name, range, "no index in range"),
            Some(m) => {
                let passed = m >= 0;
                Certificate {
                    name: name.into(),
                    checked_range: range,
                    status: if passed { CertificateStatus::Passed } else { CertificateStatus::Failed },
                    passed,
                    worst_margin: m,
                    witness_index: self.index,
                    within_guarantee: within,
                    note,
                }
            }
        }
    }
}

/// `lhs/rhs − 1`, the relative margin of `lhs ≥ rhs` for positive `rhs`.
fn rel_margin(lhs: &Float, rhs: &Float) -> Float {
    let prec = lhs.prec().max(rhs.prec());
    Float::with_val(prec, lhs / rhs) - 1u32
}

fn monotonicity_certificate(aux: &AuxiliarySequence) -> Certificate {
    let mut worst = Worst::new();
    for (i, w) in aux.values.windows(2).enumerate() {
        worst.push(rel_margin(&w[1], &w[0]), i as u64 + 1);
    }
    let n = aux.values.len() as u64;
    let mut note = String::from("strict increase over the materialized range");
    let (t_start, t_vals) = &aux.transition;
    if aux.k_star_exact && aux.k_star_lambda >= *t_start {
        if let Some(mu) = t_vals.get((aux.k_star_lambda - t_start) as usize) {
            let next = aux.ramp_value(aux.k_star_lambda + 1);
            worst.push(rel_margin(&next, mu), aux.k_star_lambda);
            note.push_str(" and across the cutoff");
        }
    }
    let mut cert = worst.finish("monotonicity", (1, n.max(1)), true, note);
    // Strictness: equal neighbours give a zero margin, which must fail.
    if cert.worst_margin.is_zero() {
        cert.passed = false;
        cert.status = CertificateStatus::Failed;
    }
    cert
}

/// Runs every certificate over indices `1..=aux.values.len()`.
///
/// * `block-gap`: `ν_{k+n_Λ} − ν_k ≥ γ_Λ(2kn_Λ + n_Λ²)`.
/// * `consecutive-gap`: `ν_{k+1} − ν_k ≥ exp(−cΛ^{1/2})`, `c = max(c₀, c_w)`, compared in log form.
/// * `counting-sandwich`: `c₁Γ^{1/2} ≤ N_ν(Γ) ≤ c₂Γ^{1/2}Λ^{(2a−1)/2}` at both sides of each jump.
/// * `block-induction`: `ν_{k+jn} − ν_k ≥ γ_Λ((k+jn)² − k²)` for `j = 1..=4`.
/// * `cutoff-transition`: `μ_{k*_Λ} ≤ Λ < μ_{k*_Λ+1}` and `ν_k > Λ` just past `k*_Λ`.
/// * `ramp-dominance`: `μ_k ≤ ν_k` for `μ_k > Λ` just past `k*_Λ`.
/// * `monotonicity`: strict increase of `ν`.
pub fn certify_auxiliary(
    aux: &AuxiliarySequence,
    consts: &StructuralConstants,
    params: &BlockGapParams,
    c_w: &Float,
) -> Result<Vec<Certificate>, AuxiliaryError> {
    let range = aux.values.len() as u64;
    let prec = aux.prec();
    let within = aux.lambda_cut >= consts.lambda_0;
    let guarantee_note = |base: &str| {
        if within {
            base.to_string()
        } else {
            format!("{base}; Λ < Λ₀, outside guarantee")
        }
    };
    let n = params.n_lambda;
    let g = Float::with_val(prec, &params.gamma_lambda);
    let mut certs = Vec::new();

    // Block gap and its induction form.
    for (name, js) in [("block-gap", 1u64..=1), ("block-induction", 1u64..=4)] {
        let mut worst = Worst::new();
        let mut missing = None;
        for j in js {
            let shift = n.checked_mul(j).ok_or_else(|| AuxiliaryError::Invalid("j·n_Λ overflows".into()))?;
            let far = match aux.nu_window(1 + shift, range as usize) {
                Ok(v) => v,
                Err(e) => {
                    missing = Some(e.to_string());
                    break;
                }
            };
            for (i, (hi, lo)) in far.iter().zip(&aux.values).enumerate() {
                let k = i as u64 + 1;
                // (k + jn)² − k² = jn(2k + jn), exact in u128.
                let diff_sq = u128::from(shift) * (2 * u128::from(k) + u128::from(shift));
                let lhs = Float::with_val(prec, hi - lo);
                let rhs = Float::with_val(prec, diff_sq) * &g;
                worst.push(rel_margin(&lhs, &rhs), k);
            }
        }
        certs.push(match missing {
            Some(e) => {
                Certificate::inconclusive(name, (1, range), &format!("indices beyond the base are unavailable: {e}"))
            }
            None => worst.finish(name, (1, range), within, guarantee_note(&format!("n_Λ = {n}"))),
        });
    }

    // Consecutive gaps in log form, since exp(−cΛ^{1/2}) underflows for large Λ.
    let c = c0(&aux.a, &aux.kappa).max(&Float::with_val(prec, c_w));
    let log_floor = Float::with_val(prec, &c * Float::with_val(prec, aux.lambda_cut.sqrt_ref()));
    let mut worst = Worst::new();
    match aux.nu_window(range + 1, 1) {
        Ok(next) => {
            let mut vals = aux.values.clone();
            vals.extend(next);
            for (i, w) in vals.windows(2).enumerate() {
                let gap = Float::with_val(prec, &w[1] - &w[0]);
                let m = if gap > 0 { gap.ln() + &log_floor } else { Float::with_val(prec, f64::NEG_INFINITY) };
                worst.push(m, i as u64 + 1);
            }
            certs.push(worst.finish(
                "consecutive-gap",
                (1, range),
                true,
                format!("c = max(c0, c_w) = {}", mp::to_decimal(&c, 20)),
            ));
        }
        Err(e) => certs.push(Certificate::inconclusive("consecutive-gap", (1, range), &e.to_string())),
    }

    // Counting sandwich at Γ = ν_k (N = k) and Γ → ν_k⁻ (N = k − 1).
    let (c1, c2) = counting_constants(&aux.kappa);
    let lam_pow =
        pow_signed(&aux.lambda_cut, &(Float::with_val(prec, Float::with_val(prec, &aux.a * 2u32) - 1u32) / 2u32));
    let mut worst = Worst::new();
    for (i, v) in aux.values.iter().enumerate() {
        let k = i as u64 + 1;
        let root = Float::with_val(prec, v.sqrt_ref());
        let lower = Float::with_val(prec, &c1 * &root);
        let upper = Float::with_val(prec, &c2 * &root) * &lam_pow;
        worst.push(rel_margin(&Float::with_val(prec, k), &lower), k);
        worst.push(rel_margin(&upper, &Float::with_val(prec, k)), k);
        if k >= 2 {
            worst.push(rel_margin(&Float::with_val(prec, k - 1), &lower), k);
        }
    }
    certs.push(worst.finish(
        "counting-sandwich",
        (1, range),
        true,
        format!("c1 = {}, c2 = {}", mp::to_decimal(&c1, 20), mp::to_decimal(&c2, 20)),
    ));

    certs.extend(transition_certificates(aux)?);
    certs.push(aux.monotonicity.clone());
    Ok(certs)
}

fn transition_certificates(aux: &AuxiliarySequence) -> Result<Vec<Certificate>, AuxiliaryError> {
    let k = aux.k_star_lambda;
    let (start, mus) = (aux.transition.0, &aux.transition.1);
    let range = (start, start + mus.len().max(1) as u64 - 1);
    if !aux.k_star_exact || mus.iter().all(|m| *m <= aux.lambda_cut) {
        let note = "the base sequence ends before exceeding Λ";
        return Ok(vec![
            Certificate::inconclusive("cutoff-transition", range, note),
            Certificate::inconclusive("ramp-dominance", range, note),
        ]);
    }
    let lam = &aux.lambda_cut;
    let mut cut = Worst::new();
    let mut ramp = Worst::new();
    for (i, mu) in mus.iter().enumerate() {
        let idx = start + i as u64;
        if idx <= k {
            // μ_{k*_Λ} ≤ Λ on this side; ν_k = μ_k.
            cut.push(rel_margin(lam, mu), idx);
        } else {
            let nu = aux.ramp_value(idx);
            cut.push(rel_margin(mu, lam), idx);
            cut.push(rel_margin(&nu, lam), idx);
            ramp.push(rel_margin(&nu, mu), idx);
        }
    }
    let mut cut = cut.finish("cutoff-transition", range, true, format!("k*_Λ = {k}"));
    // The inequalities μ_{k*+1} > Λ and ν_k > Λ are strict.
    if cut.worst_margin.is_zero() && cut.witness_index > k {
        cut.passed = false;
        cut.status = CertificateStatus::Failed;
    }
    Ok(vec![cut, ramp.finish("ramp-dominance", range, true, format!("k*_Λ = {k}"))])
}
