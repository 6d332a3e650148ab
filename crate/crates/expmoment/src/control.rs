//! Null controls for the diagonal system `ξ_k' + μ_k ξ_k = b_k v(t)`.
//!
//! The mild solution used throughout is
//! `ξ_k(t) = e^{-μ_k t} ξ_k(0) + b_k ∫_0^t e^{-μ_k (t - s)} v(s) ds`.
//! Controls are sums of decayed exponentials on disjoint segments, so the
//! simulator integrates every mode in closed form with no time stepping.
//!
//! [`finite_dim_control`] steers the modes below a cutoff to zero on one
//! window through a single moment solve. [`lebeau_robbiano_control`] chains
//! such windows on the dyadic intervals `I_j` with growing cutoffs, letting
//! the uncontrolled tail dissipate on the passive half of each interval.

use crate::linalg::Ldlt;
use crate::moment::{self, GramSystem, MomentError, MomentProblem, MomentSolution, ResidualMethod};
use crate::mp;
use crate::spectra::SpectralSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rug::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative tolerance on the final state.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Default `δ` of the cutoff schedule.
pub const DEFAULT_DELTA: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid control problem: {0}")]
    Invalid(String),
    #[error("moment solve failed on stage {stage}: {source}")]
    Moment { stage: usize, source: MomentError },
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub spectrum: SpectralSequence,
    /// `⟨B, φ_k⟩`.
    pub b_coeffs: Vec<Float>,
    /// `⟨ξ₀, φ_k⟩`.
    pub xi0: Vec<Float>,
    pub horizon: Float,
    /// Number of simulated modes.
    pub truncation: usize,
    /// Working digits; `None` applies the moment solver's automatic policy per window.
    pub precision_digits: Option<u32>,
    /// Relative tolerance on `‖ξ(T)‖ / ‖ξ₀‖`.
    pub tol: f64,
}

impl ControlProblem {
    pub fn new(
        spectrum: SpectralSequence,
        b_coeffs: Vec<Float>,
        xi0: Vec<Float>,
        horizon: Float,
        truncation: usize,
    ) -> Result<Self, ControlError> {
        let p =
            ControlProblem { spectrum, b_coeffs, xi0, horizon, truncation, precision_digits: None, tol: DEFAULT_TOL };
        p.validate()?;
        Ok(p)
    }

    pub fn with_digits(mut self, digits: u32) -> Self {
        self.precision_digits = Some(digits);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self, ControlError> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: Float) -> Result<Self, ControlError> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    /// Same problem with `ξ₀` multiplied by `factor`.
    pub fn scaled(&self, factor: &Float) -> Self {
        let mut p = self.clone();
        p.xi0 = self.xi0.iter().map(|x| Float::with_val(x.prec().max(factor.prec()), x * factor)).collect();
        p
    }

    /// Raises every frequency by `shift` through `ξ̃ = e^{-shift t} ξ`,
    /// `ṽ = e^{-shift t} v`; null controllability is unchanged and costs are
    /// reported for `ṽ`.
    pub fn shifted(&self, shift: &Float) -> Result<Self, ControlError> {
        let values: Vec<Float> = self
            .spectrum
            .values_slice()
            .iter()
            .map(|m| Float::with_val(m.prec().max(shift.prec()), m + shift))
            .collect();
        let spectrum = SpectralSequence::new(values, format!("{}+shift", self.spectrum.generator_tag()))
            .map_err(|e| ControlError::Invalid(format!("shifted spectrum: {e}")))?;
        let mut p = self.clone();
        p.spectrum = spectrum;
        p.validate()?;
        Ok(p)
    }

    /// Smallest shift making the first frequency at least one.
    pub fn default_shift(&self) -> Float {
        let mu1 = self.spectrum.first_value();
        let s = Float::with_val(mu1.prec(), 1 - mu1);
        if s.is_sign_positive() {
            s
        } else {
            Float::with_val(mu1.prec(), 0)
        }
    }

    /// `μ_1, ..., μ_N` with `N` the truncation.
    pub fn freqs(&self) -> &[Float] {
        &self.spectrum.values_slice()[..self.truncation]
    }

    pub fn xi0_norm(&self) -> Float {
        mp::norm2(&self.xi0[..self.truncation])
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let n = self.truncation;
        if n == 0 {
            return Err(ControlError::Invalid("truncation must be positive".into()));
        }
        if self.spectrum.size() < n {
            return Err(ControlError::Invalid(format!(
                "spectrum has {} values, truncation is {n}",
                self.spectrum.size()
            )));
        }
        if self.b_coeffs.len() < n || self.xi0.len() < n {
            return Err(ControlError::Invalid(format!(
                "need {n} b coefficients and initial modes, got {} and {}",
                self.b_coeffs.len(),
                self.xi0.len()
            )));
        }
        if let Some(k) = self.b_coeffs[..n].iter().position(|b| b.is_zero() || !b.is_finite()) {
            return Err(ControlError::Invalid(format!("b coefficient {} must be finite and nonzero", k + 1)));
        }
        if let Some(k) = self.xi0[..n].iter().position(|x| !x.is_finite()) {
            return Err(ControlError::Invalid(format!("initial mode {} is not finite", k + 1)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0) {
            return Err(ControlError::Invalid("horizon must be positive and finite".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ControlError::Invalid("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// `b_k = exp(-C_B μ_k^{1-δ})`.
pub fn b_profile_expdelta(freqs: &[Float], c_b: f64, delta: f64) -> Vec<Float> {
    freqs
        .iter()
        .map(|m| {
            let prec = m.prec();
            let p = mp::powf(m, &mp::from_f64(prec, 1.0 - delta));
            Float::with_val(prec, -(p * c_b)).exp()
        })
        .collect()
}

/// The `k`-th unit vector (1-based) of length `n`.
pub fn unit_mode(n: usize, k: usize, prec: u32) -> Vec<Float> {
    (1..=n).map(|i| Float::with_val(prec, if i == k { 1u32 } else { 0 })).collect()
}

/// `v(t) = Σ_j c_j e^{-ν_j (t_end - t)}` on `[t_start, t_end]`, zero elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSegment {
    #[serde(with = "crate::mp::serde_float")]
    pub t_start: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub t_end: Float,
    #[serde(with = "crate::mp::serde_vec")]
    pub coeffs: Vec<Float>,
    #[serde(with = "crate::mp::serde_vec")]
    pub basis_freqs: Vec<Float>,
    /// `‖v‖_{L²(t_start, t_end)}`.
    #[serde(with = "crate::mp::serde_float")]
    pub norm: Float,
}

impl ControlSegment {
    pub fn evaluate(&self, t: &Float) -> Float {
        if *t < self.t_start || *t > self.t_end {
            return Float::with_val(self.norm.prec(), 0);
        }
        moment::evaluate_control(&self.coeffs, &self.basis_freqs, &self.t_end, t)
    }

    pub fn length(&self) -> Float {
        Float::with_val(self.t_end.prec(), &self.t_end - &self.t_start)
    }

    /// Contribution `∫_{t_start}^{min(t, t_end)} e^{-μ (t - s)} v(s) ds` to a mode of rate `μ`.
    ///
    /// With `w = t - s` each basis term integrates to
    /// `e^{-ν (t_end - t)} ∫ e^{-(μ + ν) w} dw`, whose rate may vanish; the
    /// exact integral then reduces to the interval length.
    pub fn response(&self, mu: &Float, t: &Float) -> Float {
        let prec = self.norm.prec().max(mu.prec());
        let mut acc = Float::with_val(prec, 0);
        if *t <= self.t_start {
            return acc;
        }
        let inside = *t < self.t_end;
        let upto = if inside { Float::with_val(prec, t - &self.t_start) } else { Float::with_val(prec, self.length()) };
        for (c, nu) in self.coeffs.iter().zip(&self.basis_freqs) {
            let rate = Float::with_val(prec, mu + nu);
            let mut term = mp::exp_integral(&rate, &upto) * c;
            if inside {
                let lag = Float::with_val(prec, &self.t_end - t);
                term *= Float::with_val(prec, -(Float::with_val(prec, nu * &lag))).exp();
            }
            acc += term;
        }
        if !inside {
            let after = Float::with_val(prec, t - &self.t_end);
            acc *= Float::with_val(prec, -(Float::with_val(prec, mu * &after))).exp();
        }
        acc
    }
}

/// One dyadic stage of the schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub index: usize,
    #[serde(with = "crate::mp::serde_float")]
    pub interval_start: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub interval_end: Float,
    /// End of the active half.
    #[serde(with = "crate::mp::serde_float")]
    pub active_end: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub lambda: Float,
    pub delta: f64,
    pub controlled_modes: usize,
    #[serde(with = "crate::mp::serde_float")]
    pub cost: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub state_norm_before: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub state_norm_after: Float,
    pub digits: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSolution {
    pub segments: Vec<ControlSegment>,
    #[serde(with = "crate::mp::serde_float")]
    pub total_norm: Float,
    #[serde(with = "crate::mp::serde_float")]
    pub final_state_norm: Float,
    pub schedule: Vec<StageRecord>,
    pub converged: bool,
}

impl ControlSolution {
    /// `Σ ‖v_segment‖²`.
    pub fn sum_of_squared_norms(&self) -> Float {
        let prec = self.total_norm.prec();
        self.segments.iter().fold(Float::with_val(prec, 0), |acc, s| acc + Float::with_val(prec, s.norm.square_ref()))
    }

    pub fn evaluate(&self, t: &Float) -> Float {
        let prec = self.total_norm.prec();
        self.segments
            .iter()
            .find(|s| *t >= s.t_start && *t <= s.t_end)
            .map_or_else(|| Float::with_val(prec, 0), |s| s.evaluate(t))
    }
}

/// Free decay `ξ_k ← e^{-μ_k dt} ξ_k`.
pub fn free_decay(state: &[Float], freqs: &[Float], dt: &Float) -> Vec<Float> {
    state
        .iter()
        .zip(freqs)
        .map(|(x, m)| {
            let prec = x.prec().max(m.prec());
            let f = Float::with_val(prec, -(Float::with_val(prec, m * dt))).exp();
            f * x
        })
        .collect()
}

/// Modal state at time `t` under the given control segments, in closed form.
pub fn state_at(problem: &ControlProblem, segments: &[ControlSegment], t: &Float, prec: u32) -> Vec<Float> {
    let t = mp::at_prec(prec, t);
    let freqs: Vec<Float> = problem.freqs().iter().map(|m| mp::at_prec(prec, m)).collect();
    let start: Vec<Float> = problem.xi0[..problem.truncation].iter().map(|x| mp::at_prec(prec, x)).collect();
    let free = free_decay(&start, &freqs, &t);
    free.into_par_iter()
        .enumerate()
        .map(|(k, mut x)| {
            let b = mp::at_prec(prec, &problem.b_coeffs[k]);
            for seg in segments {
                x += Float::with_val(prec, seg.response(&freqs[k], &t) * &b);
            }
            x
        })
        .collect()
}

/// `⟨ξ(T), φ_k⟩` for `k ≤ truncation`, integrated exactly.
pub fn simulate(problem: &ControlProblem, solution: &ControlSolution) -> Vec<Float> {
    state_at(problem, &solution.segments, &problem.horizon, working_prec(problem, solution))
}

fn working_prec(problem: &ControlProblem, solution: &ControlSolution) -> u32 {
    let seg = solution.segments.iter().map(|s| s.norm.prec()).max().unwrap_or(0);
    seg.max(problem.horizon.prec()).max(mp::bits_for_digits(problem.precision_digits.unwrap_or(moment::MIN_DIGITS)))
}

fn stage_digits(problem: &ControlProblem, freqs: &[Float], len: &Float) -> u32 {
    problem.precision_digits.unwrap_or_else(|| moment::auto_digits(freqs, len))
}

/// Control on `[t0, t1]` zeroing the modes `μ_k ≤ Λ` of `state` (the state at `t0`).
///
/// Moment targets are `d_k = -ξ_k(t0) / b_k` on the window of length
/// `L = t1 - t0`, so `ξ_k(t1) = b_k ((G̃ c)_k - m_k)` vanishes to the solve's
/// accuracy.
fn control_from_state(
    problem: &ControlProblem,
    state: &[Float],
    lambda: &Float,
    t0: &Float,
    t1: &Float,
    stage: usize,
) -> Result<(ControlSegment, Option<MomentSolution>), ControlError> {
    let freqs = problem.freqs();
    let active = freqs.partition_point(|m| m <= lambda);
    if active == 0 {
        return Err(ControlError::Invalid(format!("no frequency lies below the cutoff {}", mp::to_decimal(lambda, 6))));
    }
    if *t1 <= *t0 {
        return Err(ControlError::Invalid("control window must have positive length".into()));
    }
    let len = Float::with_val(t0.prec().max(t1.prec()).max(64), t1 - t0);
    let digits = stage_digits(problem, &freqs[..active], &len);
    let prec = mp::bits_for_digits(digits);
    let len = Float::with_val(prec, t1 - t0);
    let basis: Vec<Float> = freqs[..active].iter().map(|m| mp::at_prec(prec, m)).collect();
    let targets: Vec<Float> = state[..active]
        .iter()
        .zip(&problem.b_coeffs)
        .map(|(x, b)| -Float::with_val(prec, Float::with_val(prec, x) / b))
        .collect();
    let segment = |coeffs: Vec<Float>, norm: Float| ControlSegment {
        t_start: mp::at_prec(prec, t0),
        t_end: mp::at_prec(prec, t1),
        coeffs,
        basis_freqs: basis.clone(),
        norm,
    };
    if targets.iter().all(Float::is_zero) {
        let zeros = (0..active).map(|_| Float::with_val(prec, 0)).collect();
        return Ok((segment(zeros, Float::with_val(prec, 0)), None));
    }
    let mp_problem = MomentProblem::new(basis.clone(), len, targets)
        .and_then(|p| p.with_digits(digits))
        .map(|p| p.with_residual(ResidualMethod::Algebraic))
        .map_err(|source| ControlError::Moment { stage, source })?;
    let sol = moment::solve_moments(&mp_problem).map_err(|source| ControlError::Moment { stage, source })?;
    Ok((segment(sol.coeffs.clone(), sol.norm_l2.clone()), Some(sol)))
}

/// Single-window control zeroing `J_Λ = {k : μ_k ≤ Λ}` at `t1`, starting
/// from `ξ₀` freely decayed to `t0`.
pub fn finite_dim_control(
    problem: &ControlProblem,
    lambda_cut: &Float,
    window: (&Float, &Float),
) -> Result<ControlSegment, ControlError> {
    problem.validate()?;
    let (t0, t1) = window;
    if t0.is_sign_negative() && !t0.is_zero() || *t1 > problem.horizon {
        return Err(ControlError::Invalid("window must lie inside [0, T]".into()));
    }
    let state = free_decay(&problem.xi0[..problem.truncation], problem.freqs(), t0);
    Ok(control_from_state(problem, &state, lambda_cut, t0, t1, 0)?.0)
}

/// Tuning of [`lebeau_robbiano_control`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrOptions {
    /// Maximum number of dyadic stages.
    pub max_stages: usize,
    /// Maximum halvings of `δ` on one stage.
    pub max_delta_halvings: u32,
}

impl Default for LrOptions {
    fn default() -> Self {
        LrOptions { max_stages: 60, max_delta_halvings: 8 }
    }
}

/// `α / (1 + α)`: the exponent in `Λ = (δτ)^{1/(α_θ - 1)}` matching the cost
/// law `exp(C / T^α)`.
pub fn theorem_exponent(alpha: f64) -> f64 {
    alpha / (1.0 + alpha)
}

/// `Λ = (δ τ)^{1/(α_θ - 1)}`.
pub fn stage_cutoff(delta: f64, tau: &Float, alpha: f64) -> Float {
    let prec = tau.prec().max(64);
    let base = Float::with_val(prec, tau * delta);
    let exponent = 1.0 / (theorem_exponent(alpha) - 1.0);
    Float::with_val(prec, rug::ops::Pow::pow(&base, exponent))
}

/// Dyadic Lebeau–Robbiano synthesis on `I_j = [T(1 - 2^{-j}), T(1 - 2^{-j-1})]`.
///
/// Each stage controls `μ_k ≤ Λ_j` on the first half of `I_j` and lets the
/// state decay freely on the second half. If a stage ends with a larger state
/// than it started with, `δ` is halved and the stage redone. The run stops
/// once the state is below tolerance or every simulated mode has been
/// controlled; the final state is then recomputed from scratch by [`simulate`].
pub fn lebeau_robbiano_control(
    problem: &ControlProblem,
    delta_param: f64,
    alpha: f64,
    options: LrOptions,
) -> Result<ControlSolution, ControlError> {
    problem.validate()?;
    if !(delta_param > 0.0 && delta_param < 0.5) {
        return Err(ControlError::Invalid(format!("delta must lie in (0, 1/2), got {delta_param}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ControlError::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    let n = problem.truncation;
    let freqs = problem.freqs();
    let top = &freqs[n - 1];
    let norm0 = problem.xi0_norm();
    let tp = problem.horizon.prec().max(mp::DEFAULT_PREC);
    let horizon = mp::at_prec(tp, &problem.horizon);
    let mut state: Vec<Float> = problem.xi0[..n].to_vec();
    let mut segments = Vec::new();
    let mut schedule = Vec::new();
    let tol_abs = Float::with_val(tp, &norm0 * problem.tol);

    if !norm0.is_zero() {
        for j in 0..options.max_stages {
            let scale = Float::with_val(tp, 1) >> (j as u32 + 1);
            let tau = Float::with_val(tp, &horizon * &scale);
            let a = Float::with_val(tp, &horizon - Float::with_val(tp, &tau * 2u32));
            let mid = Float::with_val(tp, &a + Float::with_val(tp, &tau / 2u32));
            let end = Float::with_val(tp, &a + &tau);
            let before = mp::norm2(&state);
            let mut delta = delta_param;
            let mut halvings = 0;
            let (record, next_state, seg) = loop {
                let lambda = stage_cutoff(delta, &tau, alpha);
                let half = Float::with_val(tp, &tau / 2u32);
                let active = freqs.partition_point(|m| *m <= lambda);
                let (seg, after_active, digits) = if active == 0 {
                    (None, free_decay(&state, freqs, &half), 0)
                } else {
                    let (seg, _) = control_from_state(problem, &state, &lambda, &a, &mid, j)?;
                    let prec = seg.norm.prec();
                    let local = ControlProblem { xi0: state.clone(), ..problem.clone() };
                    let shifted = shift_segment(&seg, &a, prec);
                    let out = state_at(&local, std::slice::from_ref(&shifted), &half, prec);
                    let digits = mp::digits_for_bits(prec);
                    (Some(seg), out, digits)
                };
                let after = free_decay(&after_active, freqs, &half);
                let after_norm = mp::norm2(&after);
                if after_norm > before && halvings < options.max_delta_halvings {
                    delta /= 2.0;
                    halvings += 1;
                    continue;
                }
                let cost = seg.as_ref().map_or_else(|| Float::with_val(tp, 0), |s| s.norm.clone());
                let record = StageRecord {
                    index: j,
                    interval_start: a.clone(),
                    interval_end: end.clone(),
                    active_end: mid.clone(),
                    lambda: lambda.clone(),
                    delta,
                    controlled_modes: active,
                    cost,
                    state_norm_before: before.clone(),
                    state_norm_after: after_norm,
                    digits,
                };
                break (record, after, seg);
            };
            let all_controlled = record.lambda >= *top;
            let small = record.state_norm_after <= tol_abs;
            schedule.push(record);
            segments.extend(seg);
            state = next_state;
            if small || all_controlled {
                break;
            }
        }
    }

    let prec = segments.iter().map(|s| s.norm.prec()).max().unwrap_or(tp).max(tp);
    let total_norm = segments
        .iter()
        .fold(Float::with_val(prec, 0), |acc, s| acc + Float::with_val(prec, s.norm.square_ref()))
        .sqrt();
    let mut solution = ControlSolution {
        segments,
        total_norm,
        final_state_norm: Float::with_val(prec, 0),
        schedule,
        converged: false,
    };
    let final_state = simulate(problem, &solution);
    solution.final_state_norm = mp::norm2(&final_state);
    solution.converged = solution.final_state_norm <= Float::with_val(prec, &norm0 * problem.tol);
    Ok(solution)
}

/// Re-expresses a segment in time measured from `origin`.
fn shift_segment(seg: &ControlSegment, origin: &Float, prec: u32) -> ControlSegment {
    ControlSegment {
        t_start: Float::with_val(prec, &seg.t_start - origin),
        t_end: Float::with_val(prec, &seg.t_end - origin),
        ..seg.clone()
    }
}

/// Observability versus controllability on `E_Λ` over a window of length `L`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    /// `K_E(L)`: the largest cost per unit initial norm, `√λ_max(D G̃⁻¹ D)`.
    #[serde(with = "crate::mp::serde_float")]
    pub control_cost: Float,
    /// Cost of the actual synthesis from the maximizing initial state, per unit norm.
    #[serde(with = "crate::mp::serde_float")]
    pub measured_cost: Float,
    /// Largest `‖e^{-LA} ζ‖ / ‖⟨B, e^{-tA} ζ⟩‖_{L²(0,L)}` over the random samples.
    #[serde(with = "crate::mp::serde_float")]
    pub max_quotient: Float,
    pub samples: usize,
    pub holds: bool,
}

/// Checks `‖e^{-LA} ζ‖ ≤ K_E(L) ‖⟨B, e^{-tA} ζ⟩‖` for random `ζ ∈ E_Λ`.
///
/// Both sides share the Gram matrix `G̃` of the window. The control cost is
/// the top eigenvalue of `D G̃⁻¹ D` with `D = diag(e^{-μ_k L} / b_k)`, found by
/// power iteration and confirmed by running the synthesis from its eigenvector.
pub fn duality_check(
    problem: &ControlProblem,
    lambda_cut: &Float,
    window: &Float,
    samples: usize,
    seed: u64,
) -> Result<DualityReport, ControlError> {
    problem.validate()?;
    let freqs = problem.freqs();
    let n = freqs.partition_point(|m| m <= lambda_cut);
    if n == 0 {
        return Err(ControlError::Invalid("no frequency lies below the cutoff".into()));
    }
    let digits = stage_digits(problem, &freqs[..n], window).max(moment::MIN_DIGITS);
    let sys = GramSystem::build(&freqs[..n], window, digits, digits << moment::AUTO_DOUBLINGS)
        .map_err(|source| ControlError::Moment { stage: 0, source })?;
    let prec = sys.prec();
    let len = mp::at_prec(prec, window);
    let decay: Vec<Float> =
        sys.freqs().iter().map(|m| Float::with_val(prec, -(Float::with_val(prec, m * &len))).exp()).collect();
    let b: Vec<Float> = problem.b_coeffs[..n].iter().map(|x| mp::at_prec(prec, x)).collect();
    let d: Vec<Float> = decay.iter().zip(&b).map(|(e, bk)| Float::with_val(prec, e / bk)).collect();
    let factor = Ldlt::factor(sys.gram()).map_err(|e| ControlError::Moment { stage: 0, source: e.into() })?;

    let apply = |x: &[Float]| -> Result<Vec<Float>, ControlError> {
        let dx: Vec<Float> = x.iter().zip(&d).map(|(a, b)| Float::with_val(prec, a * b)).collect();
        let y = factor.solve(&dx).map_err(|e| ControlError::Moment { stage: 0, source: e.into() })?;
        Ok(y.into_iter().zip(&d).map(|(a, b)| a * b).collect())
    };
    let mut v: Vec<Float> = (0..n).map(|_| Float::with_val(prec, 1)).collect();
    let mut lambda_max = Float::with_val(prec, 0);
    for _ in 0..500 {
        let w = apply(&v)?;
        let norm = mp::norm2(&w);
        let rq = mp::dot(&v, &w) / mp::norm2(&v).square();
        v = w.into_iter().map(|x| x / &norm).collect();
        let settled = !lambda_max.is_zero() && {
            let rel = Float::with_val(64, &rq - &lambda_max).abs() / Float::with_val(64, &rq);
            rel < 1e-12
        };
        lambda_max = rq;
        if settled {
            break;
        }
    }
    let control_cost = lambda_max.sqrt();

    // Synthesis from the maximizing state: cost / ‖ζ‖ should equal K_E.
    let mut local = problem.clone();
    local.truncation = n;
    local.xi0 = v.clone();
    let zero = Float::with_val(prec, 0);
    let (seg, _) = control_from_state(&local, &v, lambda_cut, &zero, &len, 0)?;
    let measured_cost = Float::with_val(prec, &seg.norm / mp::norm2(&v));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_quotient = Float::with_val(prec, 0);
    for _ in 0..samples {
        let zeta: Vec<Float> = (0..n).map(|_| Float::with_val(prec, rng.random_range(-1.0..1.0))).collect();
        let num: Vec<Float> = zeta.iter().zip(&decay).map(|(z, e)| Float::with_val(prec, z * e)).collect();
        let bz: Vec<Float> = zeta.iter().zip(&b).map(|(z, bk)| Float::with_val(prec, z * bk)).collect();
        let den = sys.gram().quadratic_form(&bz).sqrt();
        let q = mp::norm2(&num) / den;
        if q > max_quotient {
            max_quotient = q;
        }
    }
    let bound = Float::with_val(prec, &control_cost * (1.0 + 1e-6));
    let holds = max_quotient <= bound;
    Ok(DualityReport { control_cost, measured_cost, max_quotient, samples, holds })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostPoint {
    pub horizon: f64,
    #[serde(with = "crate::mp::serde_float")]
    pub cost: Float,
    pub log_cost: f64,
    #[serde(with = "crate::mp::serde_float")]
    pub final_state_norm: Float,
    pub stages: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostScan {
    pub alpha: f64,
    pub points: Vec<CostPoint>,
    /// Smallest `C` with `log(cost_i) ≤ C (1 + T_i^{-α})` at every point.
    pub envelope_c: f64,
    /// Least-squares `C` of `log(cost) ≈ C (1 + T^{-α})`.
    pub least_squares_c: f64,
    /// Largest `log(cost_i) - C_ls (1 + T_i^{-α})`.
    pub max_positive_deviation: f64,
    pub nonincreasing: bool,
    pub partial: bool,
}

impl CostScan {
    /// `log(cost_i) ≤ C_env (1 + T_i^{-α}) + slack` for every point.
    pub fn below_envelope(&self, slack: f64) -> bool {
        self.points.iter().all(|p| p.log_cost <= self.envelope_c * (1.0 + p.horizon.powf(-self.alpha)) + slack)
    }
}

/// Runs [`lebeau_robbiano_control`] for every horizon and fits the cost law.
pub fn cost_scan(
    problem: &ControlProblem,
    t_grid: &[f64],
    alpha: f64,
    delta_param: f64,
    options: LrOptions,
) -> Result<CostScan, ControlError> {
    if t_grid.len() < 4 {
        return Err(ControlError::Invalid(format!("cost scan needs at least 4 horizons, got {}", t_grid.len())));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(ControlError::Invalid(format!("horizon {t} lies outside (0, 1)")));
    }
    let mut grid = t_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let runs: Vec<Result<CostPoint, ControlError>> = grid
        .par_iter()
        .map(|&t| {
            let p = problem.clone().with_horizon(mp::from_f64(problem.horizon.prec().max(64), t))?;
            let sol = lebeau_robbiano_control(&p, delta_param, alpha, options)?;
            Ok(CostPoint {
                horizon: t,
                log_cost: mp_ln(&sol.total_norm),
                cost: sol.total_norm,
                final_state_norm: sol.final_state_norm,
                stages: sol.schedule.len(),
                converged: sol.converged,
            })
        })
        .collect();
    let points = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 + p.horizon.powf(-alpha)).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.log_cost).collect();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let least_squares_c = sxy / sxx;
    let envelope_c = xs.iter().zip(&ys).map(|(x, y)| y / x).fold(least_squares_c, f64::max);
    let max_positive_deviation =
        xs.iter().zip(&ys).map(|(x, y)| y - least_squares_c * x).fold(f64::NEG_INFINITY, f64::max);
    let nonincreasing = points.windows(2).all(|w| w[1].cost <= w[0].cost);
    let partial = points.iter().any(|p| !p.converged);
    Ok(CostScan { alpha, points, envelope_c, least_squares_c, max_positive_deviation, nonincreasing, partial })
}

fn mp_ln(x: &Float) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    Float::with_val(64, x.ln_ref()).to_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(freqs: &[f64], b: &[f64], xi0: &[f64], t: f64) -> ControlProblem {
        let prec = 256;
        let spec = SpectralSequence::from_f64(freqs, prec, "test").unwrap();
        let fl = |v: &[f64]| v.iter().map(|&x| mp::from_f64(prec, x)).collect::<Vec<_>>();
        ControlProblem::new(spec, fl(b), fl(xi0), mp::from_f64(prec, t), freqs.len()).unwrap()
    }

    fn f(x: f64) -> Float {
        mp::from_f64(256, x)
    }

    #[test]
    fn zero_initial_state_needs_no_control() {
        let p = problem(&[1.0, 2.0], &[1.0, 1.0], &[0.0, 0.0], 0.5);
        let seg = finite_dim_control(&p, &f(10.0), (&f(0.0), &f(0.5))).unwrap();
        assert!(seg.norm.is_zero());
        let sol = lebeau_robbiano_control(&p, 0.25, 7.0, LrOptions::default()).unwrap();
        assert!(sol.total_norm.is_zero() && sol.converged);
    }

    #[test]
    fn scalar_control_matches_closed_form() {
        // One mode: v(t) = c e^{-μ(T-t)}, c = -e^{-μT} ξ₀ / (b G̃), G̃ = (1 - e^{-2μT}) / (2μ).
        let (mu, b, x0, t) = (3.0f64, 0.5f64, 2.0f64, 0.4f64);
        let p = problem(&[mu], &[b], &[x0], t);
        let seg = finite_dim_control(&p, &f(mu), (&f(0.0), &f(t))).unwrap();
        let g = (1.0 - (-2.0 * mu * t).exp()) / (2.0 * mu);
        let c = -(-mu * t).exp() * x0 / (b * g);
        assert!((seg.coeffs[0].to_f64() - c).abs() < 1e-12 * c.abs());
        // Duhamel oracle: ξ(T) = e^{-μT}ξ₀ + b c (1 - e^{-2μT}) / (2μ) = 0.
        let sol = ControlSolution {
            total_norm: seg.norm.clone(),
            segments: vec![seg],
            final_state_norm: f(0.0),
            schedule: vec![],
            converged: true,
        };
        let fin = simulate(&p, &sol);
        assert!(mp::log10_abs(&fin[0]) < -40.0, "{}", fin[0]);
    }

    #[test]
    fn free_decay_without_control() {
        let p = problem(&[1.0, 4.0, 9.0], &[1.0, 1.0, 1.0], &[1.0, -2.0, 0.5], 0.7);
        let sol = ControlSolution {
            segments: vec![],
            total_norm: f(0.0),
            final_state_norm: f(0.0),
            schedule: vec![],
            converged: false,
        };
        let fin = simulate(&p, &sol);
        for (k, (mu, x)) in [(1.0f64, 1.0f64), (4.0, -2.0), (9.0, 0.5)].iter().enumerate() {
            assert!((fin[k].to_f64() - (-mu * 0.7).exp() * x).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_rate_uses_the_limit() {
        // Basis frequency ν = -μ makes the combined rate vanish: response is c · L.
        let seg = ControlSegment {
            t_start: f(0.1),
            t_end: f(0.4),
            coeffs: vec![f(2.0)],
            basis_freqs: vec![f(-5.0)],
            norm: f(0.0),
        };
        let r = seg.response(&f(5.0), &f(0.4));
        assert!((r.to_f64() - 0.6).abs() < 1e-15);
        // Inside the window at t = 0.3: e^{5 (0.4 - 0.3)} · c · 0.2.
        let r = seg.response(&f(5.0), &f(0.3));
        assert!((r.to_f64() - 0.5f64.exp() * 0.4).abs() < 1e-14);
    }

    #[test]
    fn response_matches_numerical_duhamel() {
        let seg = ControlSegment {
            t_start: f(0.2),
            t_end: f(0.5),
            coeffs: vec![f(1.5), f(-0.7)],
            basis_freqs: vec![f(2.0), f(6.0)],
            norm: f(0.0),
        };
        let rule = crate::quadrature::GaussLegendre::new(40, 256);
        for (mu, t) in [(3.0, 0.8), (1.0, 0.35)] {
            let mu_f = f(mu);
            let t_f = f(t);
            let upper = if t < 0.5 { f(t) } else { f(0.5) };
            let q = rule.integrate(&f(0.2), &upper, |s| {
                let decay = Float::with_val(256, -(Float::with_val(256, &t_f - s) * &mu_f)).exp();
                decay * seg.evaluate(s)
            });
            let exact = seg.response(&mu_f, &t_f);
            assert!((q.to_f64() - exact.to_f64()).abs() < 1e-14, "μ={mu} t={t}");
        }
    }

    #[test]
    fn single_window_zeroes_controlled_modes() {
        let p = problem(&[1.0, 3.0, 6.0, 20.0], &[1.0, 0.5, 0.25, 0.1], &[1.0, 1.0, -1.0, 1.0], 0.5).with_digits(60);
        let seg = finite_dim_control(&p, &f(7.0), (&f(0.1), &f(0.3))).unwrap();
        assert_eq!(seg.coeffs.len(), 3);
        let state = state_at(&p, std::slice::from_ref(&seg), &f(0.3), seg.norm.prec());
        for x in &state[..3] {
            assert!(mp::log10_abs(x) < -25.0, "{x}");
        }
        assert!(mp::log10_abs(&state[3]) > -5.0);
    }

    #[test]
    fn passive_half_dissipates_exactly() {
        let freqs = [2.0, 5.0];
        let p = problem(&freqs, &[1.0, 1.0], &[0.3, -0.4], 0.6);
        let seg = finite_dim_control(&p, &f(2.5), (&f(0.0), &f(0.2))).unwrap();
        let prec = seg.norm.prec();
        let at = state_at(&p, std::slice::from_ref(&seg), &f(0.2), prec);
        let later = state_at(&p, std::slice::from_ref(&seg), &f(0.5), prec);
        for k in 0..2 {
            let dt = Float::with_val(prec, f(0.5) - f(0.2));
            let expect = Float::with_val(prec, Float::with_val(prec, -(dt * freqs[k])).exp() * &at[k]);
            let diff = Float::with_val(prec, &later[k] - &expect).abs();
            assert!(mp::log10_abs(&diff) < -40.0);
        }
    }

    #[test]
    fn lebeau_robbiano_reaches_tolerance() {
        let p = problem(
            &[1.0, 4.0, 9.0, 16.0, 25.0, 36.0],
            &[1.0, 0.8, 0.6, 0.5, 0.4, 0.3],
            &[1.0, 0.0, 0.5, 0.0, 0.0, 0.2],
            0.5,
        );
        let sol = lebeau_robbiano_control(&p, 0.25, 1.0, LrOptions::default()).unwrap();
        assert!(sol.converged, "final {}", sol.final_state_norm);
        let sum = sol.sum_of_squared_norms();
        let tot = Float::with_val(sum.prec(), sol.total_norm.square_ref());
        assert!(Float::with_val(64, (sum - &tot) / tot).abs() < 1e-40);
        for w in sol.segments.windows(2) {
            assert!(w[0].t_end <= w[1].t_start);
        }
    }

    #[test]
    fn doubling_the_state_doubles_the_control() {
        let p = problem(&[1.0, 4.0, 9.0], &[1.0, 0.7, 0.4], &[0.6, -0.2, 0.1], 0.4);
        let a = lebeau_robbiano_control(&p, 0.25, 1.0, LrOptions::default()).unwrap();
        let b = lebeau_robbiano_control(&p.scaled(&f(2.0)), 0.25, 1.0, LrOptions::default()).unwrap();
        assert_eq!(a.segments.len(), b.segments.len());
        for (sa, sb) in a.segments.iter().zip(&b.segments) {
            for (ca, cb) in sa.coeffs.iter().zip(&sb.coeffs) {
                assert_eq!(Float::with_val(ca.prec(), ca * 2u32), *cb);
            }
        }
        assert_eq!(Float::with_val(a.total_norm.prec(), &a.total_norm * 2u32), b.total_norm);
    }

    #[test]
    fn observability_quotient_stays_below_cost() {
        let p = problem(&[1.0, 3.0, 7.0, 12.0], &[1.0, 0.6, 0.3, 0.2], &[1.0, 0.0, 0.0, 0.0], 0.5);
        let rep = duality_check(&p, &f(12.0), &f(0.3), 200, 7).unwrap();
        assert!(rep.holds, "{} > {}", rep.max_quotient, rep.control_cost);
        let rel =
            Float::with_val(64, Float::with_val(64, &rep.measured_cost - &rep.control_cost) / &rep.control_cost).abs();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn cost_scan_envelope_and_monotonicity() {
        let p = problem(&[1.0, 4.0, 9.0, 16.0], &[1.0, 0.5, 0.25, 0.125], &[1.0, 0.0, 0.0, 0.0], 0.5);
        let scan = cost_scan(&p, &[0.1, 0.2, 0.4, 0.6, 0.8], 1.0, 0.25, LrOptions::default()).unwrap();
        assert!(!scan.partial);
        assert!(scan.below_envelope(1e-6));
        assert!(scan.envelope_c.is_finite());
        assert!(scan.nonincreasing);
        assert!(cost_scan(&p, &[0.1, 0.2, 0.3], 1.0, 0.25, LrOptions::default()).is_err());
    }

    #[test]
    fn shift_raises_small_spectra() {
        let p = problem(&[0.2, 1.5], &[1.0, 1.0], &[1.0, 0.0], 0.5);
        let s = p.default_shift();
        assert!((s.to_f64() - 0.8).abs() < 1e-15);
        let q = p.shifted(&s).unwrap();
        assert!((q.freqs()[0].to_f64() - 1.0).abs() < 1e-15);
        assert!(p.shifted(&f(-1.0)).is_err());
    }

    #[test]
    fn validation() {
        let spec = SpectralSequence::from_f64(&[1.0, 2.0], 64, "t").unwrap();
        let fl = |v: &[f64]| v.iter().map(|&x| mp::from_f64(64, x)).collect::<Vec<_>>();
        assert!(ControlProblem::new(spec.clone(), fl(&[1.0, 0.0]), fl(&[1.0, 1.0]), f(0.5), 2).is_err());
        assert!(ControlProblem::new(spec.clone(), fl(&[1.0, 1.0]), fl(&[1.0]), f(0.5), 2).is_err());
        assert!(ControlProblem::new(spec.clone(), fl(&[1.0, 1.0]), fl(&[1.0, 1.0]), f(0.5), 3).is_err());
        let ok = ControlProblem::new(spec, fl(&[1.0, 1.0]), fl(&[1.0, 1.0]), f(0.5), 2).unwrap();
        assert!(lebeau_robbiano_control(&ok, 0.6, 7.0, LrOptions::default()).is_err());
        assert!((theorem_exponent(7.0) - 0.875).abs() < 1e-15);
        let lambda = stage_cutoff(0.25, &f(0.25), 7.0);
        assert!((lambda.to_f64() - 16f64.powi(8)).abs() < 1e-3);
    }
}
