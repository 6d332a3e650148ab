//! Truncated exponential moment problems solved by minimal-norm Gram inversion.
//!
//! Given frequencies `μ_1 < ... < μ_N`, a horizon `T` and targets `x_k`, the
//! control `u(t) = Σ_j c_j e^{-μ_j (T - t)}` with `G̃ c = m`,
//! `m_k = x_k e^{-μ_k T}`, is the unique minimal `L²(0, T)` solution of
//! `∫_0^T e^{μ_k t} u(t) dt = x_k`. Working in the decayed basis keeps every
//! Gram entry in `(0, T]` while the targets absorb the growth.
//!
//! Residuals are measured by an independent [`QuadratureOracle`] against the
//! growing exponentials, or algebraically from the closed-form Gram matrix.

use crate::linalg::{self, Ldlt, LinalgError, SymMatrix};
use crate::mp;
use crate::quadrature::{self, GradedRule};
use rayon::prelude::*;
use rug::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound of the automatic digit policy.
pub const MIN_DIGITS: u32 = 50;

/// Doublings allowed after a factorization breakdown when no ceiling is given.
pub const AUTO_DOUBLINGS: u32 = 3;

/// Power and inverse iterations spent on the condition estimate.
const CONDITION_ITERS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("invalid moment problem: {0}")]
    Invalid(String),
    #[error(
        "Gram factorization broke down at {digits} digits: pivot {step} (frequency index {row}) is {value}; \
         retry with at least {recommended_digits} digits"
    )]
    Breakdown { digits: u32, step: usize, row: usize, value: String, recommended_digits: u32 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How [`MomentSolution::residuals`] are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResidualMethod {
    /// Graded Gauss–Legendre quadrature with this many nodes per panel.
    Quadrature { nodes_per_panel: usize },
    /// `|e^{μ_k T} (G̃ c)_k - x_k|` from the closed-form Gram matrix.
    Algebraic,
}

impl ResidualMethod {
    /// Quadrature with the default `4N + 50` nodes per panel.
    pub fn default_for(n_terms: usize) -> Self {
        ResidualMethod::Quadrature { nodes_per_panel: quadrature::default_nodes(n_terms) }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ResidualMethod::Quadrature { .. } => "quadrature",
            ResidualMethod::Algebraic => "algebraic",
        }
    }
}

/// `max(50, 4N + ⌈μ_N T log10 e⌉)`.
pub fn auto_digits(freqs: &[Float], horizon: &Float) -> u32 {
    let Some(top) = freqs.last() else {
        return MIN_DIGITS;
    };
    let growth = Float::with_val(64, top * horizon).to_f64() * std::f64::consts::LOG10_E;
    let digits = 4.0 * freqs.len() as f64 + growth.max(0.0).ceil();
    (digits.min(f64::from(u32::MAX / 8)) as u32).max(MIN_DIGITS)
}

#[derive(Debug, Clone)]
pub struct MomentProblem {
    pub freqs: Vec<Float>,
    pub horizon: Float,
    pub targets: Vec<Float>,
    pub weights: Option<Vec<Float>>,
    pub precision_digits: u32,
    /// Largest digit count reached by automatic doubling.
    pub max_digits: u32,
    pub residual: ResidualMethod,
}

impl MomentProblem {
    /// Problem with automatic precision and default quadrature residuals.
    pub fn new(freqs: Vec<Float>, horizon: Float, targets: Vec<Float>) -> Result<Self, MomentError> {
        let digits = auto_digits(&freqs, &horizon);
        let problem = MomentProblem {
            residual: ResidualMethod::default_for(freqs.len()),
            freqs,
            horizon,
            targets,
            weights: None,
            precision_digits: digits,
            max_digits: digits << AUTO_DOUBLINGS,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_digits(mut self, digits: u32) -> Result<Self, MomentError> {
        if digits == 0 {
            return Err(MomentError::Invalid("precision_digits must be positive".into()));
        }
        self.precision_digits = digits;
        self.max_digits = self.max_digits.max(digits);
        Ok(self)
    }

    pub fn with_max_digits(mut self, max_digits: u32) -> Self {
        self.max_digits = max_digits.max(self.precision_digits);
        self
    }

    pub fn with_weights(mut self, weights: Vec<Float>) -> Result<Self, MomentError> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn with_residual(mut self, method: ResidualMethod) -> Self {
        self.residual = method;
        self
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// `T ∉ (0, 1)` runs are allowed but lie outside the small-time regime.
    pub fn outside_small_time_regime(&self) -> bool {
        self.horizon >= 1
    }

    pub fn validate(&self) -> Result<(), MomentError> {
        validate_freqs(&self.freqs, &self.horizon)?;
        if self.targets.len() != self.freqs.len() {
            return Err(MomentError::Invalid(format!(
                "{} targets for {} frequencies",
                self.targets.len(),
                self.freqs.len()
            )));
        }
        if self.targets.iter().any(|x| !x.is_finite()) {
            return Err(MomentError::Invalid("targets must be finite".into()));
        }
        if let Some(z) = &self.weights {
            if z.len() != self.freqs.len() {
                return Err(MomentError::Invalid(format!("{} weights for {} frequencies", z.len(), self.freqs.len())));
            }
            if let Some(k) = z.iter().position(|w| w.is_zero() || !w.is_finite()) {
                return Err(MomentError::Invalid(format!("weight {} must be finite and nonzero", k + 1)));
            }
        }
        Ok(())
    }
}

fn validate_freqs(freqs: &[Float], horizon: &Float) -> Result<(), MomentError> {
    if freqs.is_empty() {
        return Err(MomentError::Invalid("at least one frequency is required".into()));
    }
    if !(horizon.is_finite() && *horizon > 0) {
        return Err(MomentError::Invalid("horizon must be positive and finite".into()));
    }
    if let Some(k) = freqs.iter().position(|m| !(m.is_finite() && *m > 0)) {
        return Err(MomentError::Invalid(format!("frequency {} must be positive and finite", k + 1)));
    }
    for k in 1..freqs.len() {
        if freqs[k] <= freqs[k - 1] {
            let what = if freqs[k] == freqs[k - 1] { "coincides with" } else { "is below" };
            return Err(MomentError::Invalid(format!("frequency {} {what} frequency {}", k + 1, k)));
        }
    }
    Ok(())
}

/// `G̃_{jk} = (1 - e^{-(μ_j + μ_k) T}) / (μ_j + μ_k)` at `digits` digits.
pub fn gram_matrix(freqs: &[Float], horizon: &Float, digits: u32) -> Result<SymMatrix, MomentError> {
    validate_freqs(freqs, horizon)?;
    let prec = mp::bits_for_digits(digits);
    let t = mp::at_prec(prec, horizon);
    let mu: Vec<Float> = freqs.iter().map(|m| mp::at_prec(prec, m)).collect();
    Ok(SymMatrix::from_fn(mu.len(), |i, j| mp::exp_integral(&Float::with_val(prec, &mu[i] + &mu[j]), &t)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentSolution {
    /// Coefficients in the decayed basis `e^{-μ_j (T - t)}`.
    #[serde(with = "crate::mp::serde_vec")]
    pub coeffs: Vec<Float>,
    #[serde(with = "crate::mp::serde_float")]
    pub norm_l2: Float,
    /// `|achieved_k - x_k|`.
    #[serde(with = "crate::mp::serde_vec")]
    pub residuals: Vec<Float>,
    pub residual_method: ResidualMethod,
    #[serde(with = "crate::mp::serde_float")]
    pub gram_condition: Float,
    pub precision_digits: u32,
    /// Digit counts tried, ending with the one that factored.
    pub attempts: Vec<u32>,
}

impl MomentSolution {
    pub fn max_residual(&self) -> Float {
        mp::max_abs(&self.residuals)
    }

    /// `q = digits / 2 - log10(cond)`, the exponent of the expected residual bound.
    pub fn residual_exponent(&self) -> f64 {
        f64::from(self.precision_digits) / 2.0 - mp::log10_abs(&self.gram_condition)
    }
}

/// A factored Gram system, reusable across targets.
#[derive(Debug, Clone)]
pub struct GramSystem {
    freqs: Vec<Float>,
    horizon: Float,
    digits: u32,
    gram: SymMatrix,
    factor: Ldlt,
    condition: Float,
    /// `e^{-μ_k T}`.
    decay: Vec<Float>,
    attempts: Vec<u32>,
}

impl GramSystem {
    /// Factors `G̃` at `digits`, doubling on breakdown up to `max_digits`.
    pub fn build(freqs: &[Float], horizon: &Float, digits: u32, max_digits: u32) -> Result<Self, MomentError> {
        validate_freqs(freqs, horizon)?;
        let mut digits = digits.max(1);
        let mut attempts = Vec::new();
        loop {
            attempts.push(digits);
            let gram = gram_matrix(freqs, horizon, digits)?;
            match Ldlt::factor(&gram) {
                Ok(factor) => {
                    let prec = gram.prec();
                    let condition = linalg::condition_estimate(&gram, &factor, CONDITION_ITERS)?.condition;
                    let horizon = mp::at_prec(prec, horizon);
                    let freqs: Vec<Float> = freqs.iter().map(|m| mp::at_prec(prec, m)).collect();
                    let decay = freqs
                        .iter()
                        .map(|m| Float::with_val(prec, -(Float::with_val(prec, m * &horizon))).exp())
                        .collect();
                    return Ok(GramSystem { freqs, horizon, digits, gram, factor, condition, decay, attempts });
                }
                Err(LinalgError::NotPositiveDefinite { step, row, value, recommended_digits }) => {
                    let next = digits.saturating_mul(2);
                    if next > max_digits {
                        return Err(MomentError::Breakdown {
                            digits,
                            step,
                            row,
                            value,
                            recommended_digits: recommended_digits.max(next),
                        });
                    }
                    digits = next;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    pub fn prec(&self) -> u32 {
        self.gram.prec()
    }

    pub fn freqs(&self) -> &[Float] {
        &self.freqs
    }

    pub fn horizon(&self) -> &Float {
        &self.horizon
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn condition(&self) -> &Float {
        &self.condition
    }

    pub fn attempts(&self) -> &[u32] {
        &self.attempts
    }

    /// Solves `G̃ c = m` with `m_k = x_k e^{-μ_k T}`.
    pub fn coefficients(&self, targets: &[Float]) -> Result<Vec<Float>, MomentError> {
        let prec = self.prec();
        if targets.len() != self.freqs.len() {
            return Err(MomentError::Invalid(format!(
                "{} targets for {} frequencies",
                targets.len(),
                self.freqs.len()
            )));
        }
        let m: Vec<Float> = targets.iter().zip(&self.decay).map(|(x, d)| Float::with_val(prec, x * d)).collect();
        Ok(self.factor.solve(&m)?)
    }

    /// `‖u‖_{L²(0,T)} = √(cᵀ G̃ c)`.
    pub fn norm(&self, coeffs: &[Float]) -> Float {
        let q = self.gram.quadratic_form(coeffs);
        if q.is_sign_negative() {
            return Float::with_val(self.prec(), 0);
        }
        q.sqrt()
    }

    /// `e^{μ_k T} (G̃ c)_k`, the moments of `u` from the closed-form Gram.
    pub fn algebraic_moments(&self, coeffs: &[Float]) -> Vec<Float> {
        self.gram.mul_vec(coeffs).into_iter().zip(&self.decay).map(|(g, d)| g / d).collect()
    }

    /// Independent quadrature oracle at this system's precision.
    pub fn quadrature_oracle(&self, nodes_per_panel: usize) -> QuadratureOracle {
        QuadratureOracle::new(&self.freqs, &self.horizon, nodes_per_panel, self.prec())
    }

    /// Builds the full solution, measuring residuals with `method`.
    ///
    /// Pass a prebuilt `oracle` to share the quadrature across many targets.
    pub fn solve(
        &self,
        targets: &[Float],
        method: ResidualMethod,
        oracle: Option<&QuadratureOracle>,
    ) -> Result<MomentSolution, MomentError> {
        let coeffs = self.coefficients(targets)?;
        let achieved = match method {
            ResidualMethod::Algebraic => self.algebraic_moments(&coeffs),
            ResidualMethod::Quadrature { nodes_per_panel } => match oracle {
                Some(o) if o.nodes_per_panel() == nodes_per_panel && o.prec() == self.prec() => o.moments(&coeffs),
                _ => self.quadrature_oracle(nodes_per_panel).moments(&coeffs),
            },
        };
        Ok(MomentSolution {
            norm_l2: self.norm(&coeffs),
            residuals: residuals(&achieved, targets),
            coeffs,
            residual_method: method,
            gram_condition: self.condition.clone(),
            precision_digits: self.digits,
            attempts: self.attempts.clone(),
        })
    }
}

fn residuals(achieved: &[Float], targets: &[Float]) -> Vec<Float> {
    achieved.iter().zip(targets).map(|(a, x)| Float::with_val(a.prec(), a - x).abs()).collect()
}

/// Moments `∫_0^T e^{μ_k t} u(t) dt` of decayed-basis controls by quadrature.
///
/// With `s = T - t` the moment is `e^{μ_k T} ∫_0^T e^{-μ_k s} u dt`, so the
/// oracle tabulates the quadrature Gram `Q_{kj} = Σ_i w_i e^{-(μ_k + μ_j) s_i}`
/// once and applies it to any coefficient vector.
#[derive(Debug, Clone)]
pub struct QuadratureOracle {
    growth: Vec<Float>,
    gram: SymMatrix,
    nodes_per_panel: usize,
    total_nodes: usize,
    prec: u32,
}

impl QuadratureOracle {
    pub fn new(freqs: &[Float], horizon: &Float, nodes_per_panel: usize, prec: u32) -> Self {
        let n = freqs.len();
        let max_rate = Float::with_val(prec, freqs.last().expect("nonempty frequencies") * 2u32);
        let rule = GradedRule::new(horizon, &max_rate, nodes_per_panel, prec);
        let weights = rule.weights();
        let tables: Vec<Vec<Float>> = freqs.par_iter().map(|m| rule.decay_table(m)).collect();
        let weighted: Vec<Vec<Float>> = tables
            .par_iter()
            .map(|t| t.iter().zip(&weights).map(|(d, w)| Float::with_val(prec, d * w)).collect())
            .collect();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
        let entries: Vec<Float> = pairs.par_iter().map(|&(i, j)| mp::dot(&weighted[i], &tables[j])).collect();
        let mut lookup = vec![Float::new(prec); n * n];
        for (&(i, j), v) in pairs.iter().zip(entries) {
            lookup[j * n + i] = v.clone();
            lookup[i * n + j] = v;
        }
        let gram = SymMatrix::from_fn(n, |i, j| lookup[i * n + j].clone());
        let growth = freqs.iter().map(|m| Float::with_val(prec, Float::with_val(prec, m * horizon).exp())).collect();
        QuadratureOracle { growth, gram, nodes_per_panel, total_nodes: rule.len(), prec }
    }

    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.nodes_per_panel
    }

    pub fn total_nodes(&self) -> usize {
        self.total_nodes
    }

    /// The tabulated quadrature Gram `Q`.
    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    /// `∫_0^T e^{μ_k t} u(t) dt` for every `k`.
    pub fn moments(&self, coeffs: &[Float]) -> Vec<Float> {
        self.gram.mul_vec(coeffs).into_iter().zip(&self.growth).map(|(q, g)| q * g).collect()
    }

    /// `∫_0^T u(t)² dt`.
    pub fn energy(&self, coeffs: &[Float]) -> Float {
        self.gram.quadratic_form(coeffs)
    }
}

/// Solves one moment problem with its own precision and residual policy.
pub fn solve_moments(problem: &MomentProblem) -> Result<MomentSolution, MomentError> {
    problem.validate()?;
    let system = GramSystem::build(&problem.freqs, &problem.horizon, problem.precision_digits, problem.max_digits)?;
    system.solve(&problem.targets, problem.residual, None)
}

/// Numerical biorthogonal family `σ_k` with `∫ σ_k e^{μ_j t} = δ_{jk}`.
#[derive(Debug, Clone)]
pub struct BiorthogonalFamily {
    pub members: Vec<MomentSolution>,
    /// `cross[k][j] = ∫_0^T σ_k(t) e^{μ_j t} dt` as measured by the residual method.
    pub cross_moments: Vec<Vec<Float>>,
    pub freqs: Vec<Float>,
    pub horizon: Float,
}

impl BiorthogonalFamily {
    /// `max_{j,k} |cross_{kj} - δ_{jk}|`.
    pub fn identity_error(&self) -> Float {
        let mut worst = Float::with_val(self.horizon.prec(), 0);
        for (k, row) in self.cross_moments.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let delta = if j == k { 1u32 } else { 0 };
                let e = Float::with_val(v.prec(), v - delta).abs();
                if e > worst {
                    worst = e;
                }
            }
        }
        worst
    }

    pub fn norms(&self) -> Vec<Float> {
        self.members.iter().map(|m| m.norm_l2.clone()).collect()
    }

    pub fn log_norms(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.norm_l2.clone().ln().to_f64()).collect()
    }

    /// Whether `log ‖σ_k‖` is nondecreasing from the second index on.
    pub fn norms_nondecreasing_after_first(&self) -> bool {
        self.log_norms().windows(2).skip(1).all(|w| w[1] >= w[0])
    }

    /// Least-squares fit of `log ‖σ_k‖ + μ_k T ≈ A + B √μ_k`, the shape of the
    /// known upper envelope with its constants left free.
    pub fn envelope_fit(&self) -> EnvelopeFit {
        let t = self.horizon.to_f64();
        let pts: Vec<(f64, f64)> = self
            .freqs
            .iter()
            .zip(self.log_norms())
            .map(|(m, l)| {
                let mu = m.to_f64();
                (mu.sqrt(), l + mu * t)
            })
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let max_deviation = pts.iter().map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
        EnvelopeFit { intercept, sqrt_coefficient: slope, max_deviation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub intercept: f64,
    pub sqrt_coefficient: f64,
    pub max_deviation: f64,
}

/// Solves for every unit target with one factorization and one oracle.
pub fn biorthogonal_family(
    freqs: &[Float],
    horizon: &Float,
    digits: u32,
    method: ResidualMethod,
) -> Result<BiorthogonalFamily, MomentError> {
    let system = GramSystem::build(freqs, horizon, digits, digits << AUTO_DOUBLINGS)?;
    let prec = system.prec();
    let oracle = match method {
        ResidualMethod::Quadrature { nodes_per_panel } => Some(system.quadrature_oracle(nodes_per_panel)),
        ResidualMethod::Algebraic => None,
    };
    let n = freqs.len();
    let results: Vec<Result<(MomentSolution, Vec<Float>), MomentError>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let targets: Vec<Float> = (0..n).map(|j| Float::with_val(prec, if j == k { 1u32 } else { 0 })).collect();
            let sol = system.solve(&targets, method, oracle.as_ref())?;
            let row = match &oracle {
                Some(o) => o.moments(&sol.coeffs),
                None => system.algebraic_moments(&sol.coeffs),
            };
            Ok((sol, row))
        })
        .collect();
    let mut members = Vec::with_capacity(n);
    let mut cross_moments = Vec::with_capacity(n);
    for r in results {
        let (sol, row) = r?;
        members.push(sol);
        cross_moments.push(row);
    }
    Ok(BiorthogonalFamily { members, cross_moments, freqs: system.freqs().to_vec(), horizon: system.horizon().clone() })
}

/// Solution of a weighted problem together with its normalized cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedOutcome {
    pub solution: MomentSolution,
    /// `‖u‖ / ‖z x‖_{ℓ²}`.
    #[serde(with = "crate::mp::serde_float")]
    pub measured_cost: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub weighted_target_norm: Float,
    /// Smallest `C_z` with `|z_k| ≥ exp(-C_z μ_k^{1-δ})` for every `k` (zero if all `|z_k| ≥ 1`).
    #[serde(with = "crate::mp::serde_float")]
    pub weight_constant: Float,
}

/// Solves a weighted problem and reports `measured_cost = ‖u‖ / ‖z x‖`.
pub fn solve_weighted_moment_theorem(problem: &MomentProblem, delta: f64) -> Result<WeightedOutcome, MomentError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MomentError::Invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let Some(weights) = &problem.weights else {
        return Err(MomentError::Invalid("weighted solve needs weights".into()));
    };
    problem.validate()?;
    let solution = solve_moments(problem)?;
    let prec = solution.norm_l2.prec();
    let zx: Vec<Float> = weights.iter().zip(&problem.targets).map(|(z, x)| Float::with_val(prec, z * x)).collect();
    let weighted_target_norm = mp::norm2(&zx);
    if weighted_target_norm.is_zero() {
        return Err(MomentError::Invalid("‖z x‖ must be positive".into()));
    }
    let power = mp::from_f64(prec, 1.0 - delta);
    let mut weight_constant = Float::with_val(prec, 0);
    for (z, m) in weights.iter().zip(&problem.freqs) {
        let need = Float::with_val(prec, z.abs_ref()).ln();
        let c = -need / mp::powf(&mp::at_prec(prec, m), &power);
        if c > weight_constant {
            weight_constant = c;
        }
    }
    let measured_cost = Float::with_val(prec, &solution.norm_l2 / &weighted_target_norm);
    Ok(WeightedOutcome { solution, measured_cost, weighted_target_norm, weight_constant })
}

/// Flattens block targets of a densified sequence: `y_{k,0} = x_k`, `y_{k,ℓ} = 0` for `ℓ > 0`.
pub fn densified_targets(targets: &[Float], block_sizes: &[usize]) -> Result<Vec<Float>, MomentError> {
    if targets.len() != block_sizes.len() {
        return Err(MomentError::Invalid(format!("{} targets for {} blocks", targets.len(), block_sizes.len())));
    }
    let mut out = Vec::with_capacity(block_sizes.iter().sum());
    for (x, &size) in targets.iter().zip(block_sizes) {
        if size == 0 {
            return Err(MomentError::Invalid("empty densified block".into()));
        }
        out.push(x.clone());
        out.extend((1..size).map(|_| Float::with_val(x.prec(), 0)));
    }
    Ok(out)
}

/// `u(t) = Σ_j c_j e^{-μ_j (T - t)}`.
pub fn evaluate_control(coeffs: &[Float], freqs: &[Float], horizon: &Float, t: &Float) -> Float {
    let prec = coeffs.first().map_or(mp::DEFAULT_PREC, Float::prec);
    let s = Float::with_val(prec, horizon - t);
    let mut u = Float::with_val(prec, 0);
    for (c, m) in coeffs.iter().zip(freqs) {
        let e = Float::with_val(prec, -(Float::with_val(prec, m * &s))).exp();
        u += e * c;
    }
    u
}
