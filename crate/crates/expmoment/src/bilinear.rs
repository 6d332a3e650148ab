//! Multiplicative (bilinear) control of the bi-Laplacian on a rectangle.
//!
//! On `Ω = (0, a) × (0, b)` the Dirichlet bi-Laplacian has eigenpairs
//! `μ_k = π⁴(ℓ_k²/a² + m_k²/b²)²` and
//! `φ_k = (2/√(ab)) sin(ℓ_k π x / a) sin(m_k π y / b)`. The state obeys
//! `ψ' + Aψ + v(t) 𝔅ψ = 0` where `𝔅` multiplies by a separable polynomial
//! `Q(x, y) = Q¹(x) Q²(y)`, so every coupling `⟨𝔅φ_j, φ_k⟩` is a product of
//! two one-dimensional sine-pair integrals.
//!
//! The module computes those couplings in closed form (with a quadrature
//! cross-check), certifies the spreading lower bound and the spectral gap,
//! integrates the truncated bilinear system by Strang splitting, and drives
//! a state near `φ_j` onto the eigensolution `e^{-μ_j t} φ_j` by repeated
//! linearized null controls on shrinking intervals.
//!
//! Time integration works in the frame `ψ̃ = e^{(μ_1 - 1) t} ψ`, where the
//! rates become `μ̃_k = μ_k - μ_1 + 1 ≥ 1` and the target is
//! `e^{-s t} φ_j` with `s = μ̃_j`. Writing the deviation as `ξ = ψ̃ - e^{-st}φ_j`
//! and the control as `v = e^{st} w`, the linear part of the dynamics is
//! `ξ' + Ãξ + w 𝔅φ_j = 0`, a diagonal system the [`control`] module handles.

use crate::control::{self, ControlError, ControlProblem, ControlSegment};
use crate::hypotheses;
use crate::mp;
use crate::quadrature::{self, GaussLegendre};
use crate::spectra::{self, LatticeSpectrum, SideLength, SpectralSequence};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Modes kept by default.
pub const DEFAULT_TRUNCATION: usize = 25;

/// Highest polynomial degree integrated in closed form.
pub const CLOSED_FORM_MAX_DEGREE: usize = 4;

/// Gauss–Legendre nodes per half-oscillation in the quadrature path.
const QUAD_NODES: usize = 12;

/// Relative accuracy demanded of the quadrature path.
const QUAD_TOL: f64 = 1e-24;

/// Panel doublings allowed before the quadrature path gives up.
const QUAD_MAX_DOUBLINGS: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilinearError {
    #[error("invalid bilinear input: {0}")]
    Invalid(String),
    #[error("coupling <Bφ_{j}, φ_{k}> vanishes; the spreading bound cannot hold")]
    ZeroCoupling { j: usize, k: usize },
    #[error("eigenvalue {value} is repeated at index {index} (lattice pairs {pairs:?})")]
    RepeatedEigenvalue { index: usize, value: String, pairs: Vec<(u64, u64)> },
    #[error("quadrature for indices ({k}, {l}) did not converge: achieved error {achieved:e}")]
    Quadrature { k: u64, l: u64, achieved: f64 },
    #[error("simulation did not converge after {doublings} step doublings: Richardson estimate {richardson:e}")]
    SimulationUnconverged { doublings: u32, richardson: f64 },
    #[error("simulation left the representable range at t = {t}")]
    NonFinite { t: f64 },
    #[error("spectrum: {0}")]
    Spectra(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// A polynomial in one variable; `coeffs[p]` multiplies `x^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn monomial(p: usize) -> Self {
        let mut c = vec![0.0; p + 1];
        c[p] = 1.0;
        Polynomial { coeffs: c }
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, x: &Float) -> Float {
        let mut acc = Float::with_val(x.prec(), 0);
        for c in self.coeffs.iter().rev() {
            acc *= x;
            acc += *c;
        }
        acc
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(p, c)| match p {
                0 => format!("{c}"),
                1 => format!("{c}*t"),
                _ => format!("{c}*t^{p}"),
            })
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

/// The separable weight `Q(x, y) = Q¹(x) Q²(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub qx: Polynomial,
    pub qy: Polynomial,
}

impl QSpec {
    pub fn new(qx: Polynomial, qy: Polynomial) -> Self {
        QSpec { qx, qy }
    }

    /// `Q = x² y²`.
    pub fn x2y2() -> Self {
        QSpec::new(Polynomial::monomial(2), Polynomial::monomial(2))
    }

    /// Parses an expression in `x` and `y` built from numbers, `+`, `-`, `*`,
    /// integer powers and parentheses, e.g. `x^2*y^2` or `(x^2+1)*(2*y-y^3)`.
    /// The expanded polynomial must factor as `Q¹(x) Q²(y)`.
    pub fn parse(text: &str) -> Result<Self, BilinearError> {
        let mut parser = ExprParser { chars: text.chars().filter(|c| !c.is_whitespace()).collect(), pos: 0 };
        let poly = parser.expr().map_err(|e| BilinearError::Invalid(format!("cannot parse `{text}`: {e}")))?;
        if parser.pos != parser.chars.len() {
            return Err(BilinearError::Invalid(format!("unexpected trailing input in `{text}`")));
        }
        separate(&poly).ok_or_else(|| BilinearError::Invalid(format!("`{text}` is not a product Q1(x)*Q2(y)")))
    }
}

type Bivariate = BTreeMap<(usize, usize), f64>;

struct ExprParser {
    chars: Vec<char>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Bivariate, String> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let sign = if op == '+' { 1.0 } else { -1.0 };
            for (k, v) in rhs {
                *acc.entry(k).or_insert(0.0) += sign * v;
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Bivariate, String> {
        let mut acc = self.unary()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = mul(&acc, &rhs);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Bivariate, String> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.into_iter().map(|(k, v)| (k, -v)).collect())
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Bivariate, String> {
        let base = self.primary()?;
        if self.peek() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let n: u32 = self.chars[start..self.pos]
            .iter()
            .collect::<String>()
            .parse()
            .map_err(|_| "expected a nonnegative integer exponent".to_string())?;
        if n > 32 {
            return Err(format!("exponent {n} is too large"));
        }
        let mut acc: Bivariate = [((0, 0), 1.0)].into_iter().collect();
        for _ in 0..n {
            acc = mul(&acc, &base);
        }
        Ok(acc)
    }

    fn primary(&mut self) -> Result<Bivariate, String> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(')') {
                    return Err("missing `)`".into());
                }
                self.pos += 1;
                Ok(inner)
            }
            Some('x') => {
                self.pos += 1;
                Ok([((1, 0), 1.0)].into_iter().collect())
            }
            Some('y') => {
                self.pos += 1;
                Ok([((0, 1), 1.0)].into_iter().collect())
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                    self.pos += 1;
                }
                if matches!(self.peek(), Some('e' | 'E')) {
                    self.pos += 1;
                    if matches!(self.peek(), Some('+' | '-')) {
                        self.pos += 1;
                    }
                    while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                }
                let s: String = self.chars[start..self.pos].iter().collect();
                let v: f64 = s.parse().map_err(|_| format!("bad number `{s}`"))?;
                Ok([((0, 0), v)].into_iter().collect())
            }
            Some(c) => Err(format!("unexpected `{c}`")),
            None => Err("unexpected end of input".into()),
        }
    }
}

fn mul(a: &Bivariate, b: &Bivariate) -> Bivariate {
    let mut out = Bivariate::new();
    for (&(p1, q1), v1) in a {
        for (&(p2, q2), v2) in b {
            *out.entry((p1 + p2, q1 + q2)).or_insert(0.0) += v1 * v2;
        }
    }
    out
}

/// Splits a rank-one coefficient table into `Q¹(x) Q²(y)`.
fn separate(poly: &Bivariate) -> Option<QSpec> {
    let (&(p0, q0), &pivot) = poly.iter().filter(|(_, v)| **v != 0.0).max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    let px = poly.keys().map(|k| k.0).max().unwrap_or(0);
    let qy = poly.keys().map(|k| k.1).max().unwrap_or(0);
    let at = |p: usize, q: usize| poly.get(&(p, q)).copied().unwrap_or(0.0);
    let qx_coeffs: Vec<f64> = (0..=px).map(|p| at(p, q0)).collect();
    let qy_coeffs: Vec<f64> = (0..=qy).map(|q| at(p0, q) / pivot).collect();
    let scale = pivot.abs();
    for p in 0..=px {
        for q in 0..=qy {
            if (at(p, q) - qx_coeffs[p] * qy_coeffs[q]).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    Some(QSpec::new(Polynomial::new(qx_coeffs), Polynomial::new(qy_coeffs)))
}

/// `∫_0^L x^p cos(nπx/L) dx` for `p = 0..=deg`.
///
/// With `ω = nπ/L` the boundary terms of `sin(ωx)` vanish, leaving
/// `C_p = -(p/ω) S_{p-1}` and `S_p = -L^p (-1)^n / ω + (p/ω) C_{p-1}`.
fn cosine_moments(n: u64, len: &Float, deg: usize) -> Vec<Float> {
    let prec = len.prec();
    if n == 0 {
        return (0..=deg).map(|p| Float::with_val(prec, Pow::pow(len, p as u32 + 1)) / (p as u32 + 1)).collect();
    }
    let omega = Float::with_val(prec, mp::pi(prec) * n) / len;
    let sign = if n % 2 == 0 { 1i32 } else { -1 };
    let mut c = vec![Float::with_val(prec, 0)];
    let mut s = vec![Float::with_val(prec, 1 - sign) / &omega];
    let mut lp = Float::with_val(prec, 1);
    for p in 1..=deg {
        lp *= len;
        let cp = -Float::with_val(prec, &s[p - 1] * p as u32) / &omega;
        let sp = (Float::with_val(prec, &c[p - 1] * p as u32) - Float::with_val(prec, &lp * sign)) / &omega;
        c.push(cp);
        s.push(sp);
    }
    c
}

/// `∫_0^L Q(x) sin(k π x / L) sin(l π x / L) dx` in closed form, or `None`
/// when `Q` has degree above [`CLOSED_FORM_MAX_DEGREE`].
pub fn sine_pair_closed_form(q: &Polynomial, len: &Float, k: u64, l: u64) -> Option<Float> {
    let prec = len.prec();
    let Some(deg) = q.degree() else {
        return Some(Float::with_val(prec, 0));
    };
    if deg > CLOSED_FORM_MAX_DEGREE {
        return None;
    }
    let near = cosine_moments(k.abs_diff(l), len, deg);
    let far = cosine_moments(k + l, len, deg);
    let mut acc = Float::with_val(prec, 0);
    for (p, a) in q.coeffs.iter().enumerate() {
        if *a != 0.0 {
            acc += Float::with_val(prec, &near[p] - &far[p]) * *a;
        }
    }
    Some(acc / 2u32)
}

/// A quadrature value with its error estimate.
#[derive(Debug, Clone)]
pub struct QuadratureValue {
    pub value: Float,
    pub error_estimate: f64,
    pub panels: usize,
}

/// The sine-pair integral by composite Gauss–Legendre quadrature, one panel
/// per half-oscillation of the fastest factor, doubling panels until two
/// successive estimates agree.
pub fn sine_pair_quadrature(
    q: &Polynomial,
    len: &Float,
    k: u64,
    l: u64,
    rule: &GaussLegendre,
) -> Result<QuadratureValue, BilinearError> {
    let prec = rule.prec();
    let len = mp::at_prec(prec, len);
    let zero = Float::with_val(prec, 0);
    let pi_over_len = Float::with_val(prec, mp::pi(prec) / &len);
    let wk = Float::with_val(prec, &pi_over_len * k);
    let wl = Float::with_val(prec, &pi_over_len * l);
    let integrand = |x: &Float| {
        let sk = Float::with_val(prec, &wk * x).sin();
        let sl = Float::with_val(prec, &wl * x).sin();
        q.eval(x) * sk * sl
    };
    let mut scale = Float::with_val(prec, 0);
    for (p, a) in q.coeffs.iter().enumerate() {
        scale += Float::with_val(prec, Pow::pow(&len, p as u32 + 1)) * a.abs();
    }
    let tol = scale.to_f64() * QUAD_TOL;
    let mut panels = (k + l).max(1) as usize + q.degree().unwrap_or(0);
    let mut prev = quadrature::composite(rule, &zero, &len, panels, integrand);
    let mut err = f64::INFINITY;
    for _ in 0..QUAD_MAX_DOUBLINGS {
        panels *= 2;
        let next = quadrature::composite(rule, &zero, &len, panels, integrand);
        err = Float::with_val(prec, &next - &prev).abs().to_f64();
        prev = next;
        if err <= tol {
            return Ok(QuadratureValue { value: prev, error_estimate: err, panels });
        }
    }
    Err(BilinearError::Quadrature { k, l, achieved: err })
}

/// The sine-pair integral: closed form when available, quadrature otherwise.
pub fn sine_pair_integral(q: &Polynomial, len: &Float, k: u64, l: u64) -> Result<Float, BilinearError> {
    if let Some(v) = sine_pair_closed_form(q, len, k, l) {
        return Ok(v);
    }
    let rule = GaussLegendre::new(QUAD_NODES, len.prec());
    Ok(sine_pair_quadrature(q, len, k, l, &rule)?.value)
}

/// Largest relative disagreement between the two integration paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathAgreement {
    pub max_relative: f64,
    pub worst: (u64, u64),
    pub pairs_checked: usize,
}

/// Compares closed form and quadrature for every `1 ≤ k ≤ l ≤ max_index`.
pub fn cross_check_paths(q: &Polynomial, len: &Float, max_index: u64) -> Result<PathAgreement, BilinearError> {
    if q.degree().is_some_and(|d| d > CLOSED_FORM_MAX_DEGREE) {
        return Err(BilinearError::Invalid(format!("no closed form for degree above {CLOSED_FORM_MAX_DEGREE}")));
    }
    let rule = GaussLegendre::new(QUAD_NODES, len.prec());
    let pairs: Vec<(u64, u64)> = (1..=max_index).flat_map(|k| (k..=max_index).map(move |l| (k, l))).collect();
    let results: Result<Vec<(f64, (u64, u64))>, BilinearError> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let closed = sine_pair_closed_form(q, len, k, l).expect("degree checked");
            let quad = sine_pair_quadrature(q, len, k, l, &rule)?.value;
            let diff = Float::with_val(len.prec(), &closed - &quad).abs();
            let rel = if closed.is_zero() { diff.to_f64() } else { (diff / closed.abs()).to_f64() };
            Ok((rel, (k, l)))
        })
        .collect();
    let results = results?;
    let (max_relative, worst) = results.iter().copied().fold((0.0, (1, 1)), |acc, r| if r.0 > acc.0 { r } else { acc });
    Ok(PathAgreement { max_relative, worst, pairs_checked: results.len() })
}

/// The rectangle, its bi-Laplace spectrum and the control weight.
#[derive(Debug, Clone)]
pub struct RectangleSystem {
    pub a_len: SideLength,
    pub b_len: SideLength,
    /// Holds `2 · truncation` eigenvalues so the truncation can be doubled.
    pub spectrum: LatticeSpectrum,
    pub q_spec: QSpec,
    pub truncation: usize,
}

impl RectangleSystem {
    pub fn new(
        a_len: SideLength,
        b_len: SideLength,
        q_spec: QSpec,
        truncation: usize,
        prec: u32,
    ) -> Result<Self, BilinearError> {
        if truncation == 0 {
            return Err(BilinearError::Invalid("truncation must be at least 1".into()));
        }
        let spectrum = spectra::generate_rectangle_bilaplacian(&a_len, &b_len, 2 * truncation, prec)
            .map_err(|e| BilinearError::Spectra(e.to_string()))?;
        Ok(RectangleSystem { a_len, b_len, spectrum, q_spec, truncation })
    }

    /// `(0, 1) × (0, 2^{1/3})` with `Q = x² y²`.
    pub fn standard(truncation: usize, prec: u32) -> Result<Self, BilinearError> {
        RectangleSystem::new(SideLength::one(), SideLength::cube_root_of_two(), QSpec::x2y2(), truncation, prec)
    }

    pub fn prec(&self) -> u32 {
        self.spectrum.prec()
    }

    /// Modes available for simulation (twice the truncation).
    pub fn available_modes(&self) -> usize {
        self.spectrum.len()
    }

    /// `μ_k`, 1-based.
    pub fn eigenvalue(&self, k: usize) -> &Float {
        &self.spectrum.raw_values[k - 1]
    }

    /// `(ℓ_k, m_k)`, 1-based.
    pub fn pair(&self, k: usize) -> (u64, u64) {
        self.spectrum.pairs[k - 1]
    }

    /// `μ_1 < ... < μ_n`, or the first repeated value.
    pub fn frequencies(&self, n: usize) -> Result<Vec<Float>, BilinearError> {
        self.check_index(n)?;
        if let Some(rep) = first_repeat(&self.spectrum, n) {
            return Err(rep);
        }
        Ok(self.spectrum.raw_values[..n].to_vec())
    }

    fn check_index(&self, k: usize) -> Result<(), BilinearError> {
        if k == 0 || k > self.available_modes() {
            return Err(BilinearError::Invalid(format!("mode index {k} outside 1..={}", self.available_modes())));
        }
        Ok(())
    }

    /// `⟨𝔅φ_j, φ_k⟩ = (4/(ab)) · I_x(ℓ_j, ℓ_k) · I_y(m_j, m_k)`.
    pub fn coupling(&self, j: usize, k: usize) -> Result<Float, BilinearError> {
        self.check_index(j)?;
        self.check_index(k)?;
        let prec = self.prec();
        let a = self.a_len.value(prec);
        let b = self.b_len.value(prec);
        let (lj, mj) = self.pair(j);
        let (lk, mk) = self.pair(k);
        let ix = sine_pair_integral(&self.q_spec.qx, &a, lj, lk)?;
        let iy = sine_pair_integral(&self.q_spec.qy, &b, mj, mk)?;
        let norm = Float::with_val(prec, 4) / Float::with_val(prec, &a * &b);
        Ok(norm * ix * iy)
    }

    /// The symmetric `n × n` coupling block in double precision.
    pub fn coupling_matrix(&self, n: usize) -> Result<DMatrix<f64>, BilinearError> {
        self.check_index(n)?;
        let upper: Vec<(usize, usize)> = (1..=n).flat_map(|j| (j..=n).map(move |k| (j, k))).collect();
        let values: Result<Vec<f64>, BilinearError> =
            upper.par_iter().map(|&(j, k)| self.coupling(j, k).map(|v| v.to_f64())).collect();
        let values = values?;
        let mut m = DMatrix::zeros(n, n);
        for (&(j, k), v) in upper.iter().zip(values) {
            m[(j - 1, k - 1)] = v;
            m[(k - 1, j - 1)] = v;
        }
        Ok(m)
    }
}

fn first_repeat(spectrum: &LatticeSpectrum, n: usize) -> Option<BilinearError> {
    let mut index = 1;
    let mut seen = 0;
    for (value, pairs) in spectrum.multiplicities() {
        if seen >= n {
            break;
        }
        if pairs.len() > 1 && seen + 1 < n {
            return Some(BilinearError::RepeatedEigenvalue { index, value: mp::to_decimal(&value, 20), pairs });
        }
        seen += pairs.len();
        index += pairs.len();
    }
    None
}

/// `⟨𝔅φ_j, φ_k⟩` for `k = 1..=truncation`.
pub fn multiplication_matrix_elements(system: &RectangleSystem, j: usize) -> Result<Vec<Float>, BilinearError> {
    if j == 0 || j > system.truncation {
        return Err(BilinearError::Invalid(format!("mode {j} outside 1..={}", system.truncation)));
    }
    (1..=system.truncation).into_par_iter().map(|k| system.coupling(j, k)).collect()
}

/// Spreading constant: `|⟨𝔅φ_j, φ_k⟩| ≥ exp(−C_Bj μ_k^{1−δ})` for every checked `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpreadingCertificate {
    pub j: usize,
    pub delta: f64,
    #[serde(with = "crate::mp::serde_float")]
    pub c_bj: Float,
    /// 1-based `k` attaining the maximum.
    pub attained_at: usize,
    /// `log10 |⟨𝔅φ_j, φ_k⟩|` for each `k`.
    pub log10_magnitudes: Vec<f64>,
    pub checked: usize,
}

/// `C_Bj = max_k (−ln|⟨𝔅φ_j, φ_k⟩|) / μ_k^{1−δ}`; fails on an exactly zero coupling.
pub fn verify_spreading(system: &RectangleSystem, j: usize, delta: f64) -> Result<SpreadingCertificate, BilinearError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(BilinearError::Invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let elems = multiplication_matrix_elements(system, j)?;
    let prec = system.prec();
    let exponent = Float::with_val(prec, 1.0 - delta);
    let mut best: Option<(Float, usize)> = None;
    let mut logs = Vec::with_capacity(elems.len());
    for (i, e) in elems.iter().enumerate() {
        let k = i + 1;
        if e.is_zero() {
            return Err(BilinearError::ZeroCoupling { j, k });
        }
        logs.push(mp::log10_abs(e));
        let num = -Float::with_val(prec, e.abs_ref()).ln();
        let ratio = num / mp::powf(system.eigenvalue(k), &exponent);
        if best.as_ref().is_none_or(|(b, _)| ratio > *b) {
            best = Some((ratio, k));
        }
    }
    let (c_bj, attained_at) = best.expect("truncation is at least one");
    Ok(SpreadingCertificate { j, delta, c_bj, attained_at, log10_magnitudes: logs, checked: elems.len() })
}

/// Gap scan over the first `truncation` eigenvalues.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RothCertificate {
    pub epsilon: f64,
    /// Largest `C` with `μ_{k+1} − μ_k ≥ C / μ_{k+1}^{ε/2}` on the checked range.
    #[serde(with = "crate::mp::serde_float")]
    pub fitted_c: Float,
    /// 1-based `k` whose gap attains the minimum.
    pub worst_index: usize,
    pub checked: usize,
    /// Weak-gap constant `c_w` with `μ_{k+1} − μ_k ≥ exp(−c_w μ_k^{1/2})`.
    #[serde(with = "crate::mp::serde_float")]
    pub weak_gap_c_w: Float,
    pub weak_gap_worst_index: u64,
}

/// Fits the gap constant; a repeated eigenvalue is a hard failure carrying its lattice pairs.
pub fn roth_gap_scan(system: &RectangleSystem, epsilon: f64) -> Result<RothCertificate, BilinearError> {
    if !(epsilon > 0.0) {
        return Err(BilinearError::Invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = system.truncation;
    if n < 2 {
        return Err(BilinearError::Invalid("a gap scan needs at least two eigenvalues".into()));
    }
    let values = system.frequencies(n)?;
    let prec = system.prec();
    let half_eps = Float::with_val(prec, epsilon / 2.0);
    let mut best: Option<(Float, usize)> = None;
    for (i, w) in values.windows(2).enumerate() {
        let gap = Float::with_val(prec, &w[1] - &w[0]);
        let c = gap * mp::powf(&w[1], &half_eps);
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, i + 1));
        }
    }
    let (fitted_c, worst_index) = best.expect("at least one gap");
    let weak = hypotheses::weak_gap_over(&values, 1).map_err(|e| BilinearError::Spectra(e.to_string()))?;
    Ok(RothCertificate {
        epsilon,
        fitted_c,
        worst_index,
        checked: n,
        weak_gap_c_w: weak.c_w,
        weak_gap_worst_index: weak.worst_index,
    })
}

/// A control constant on each interval `[times[i], times[i+1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledControl {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SampledControl {
    pub fn zero(t0: f64, t1: f64) -> Self {
        SampledControl { times: vec![t0, t1], values: vec![0.0] }
    }

    pub fn constant(t0: f64, t1: f64, pieces: usize, v: f64) -> Self {
        let times = (0..=pieces).map(|i| t0 + (t1 - t0) * i as f64 / pieces as f64).collect();
        SampledControl { times, values: vec![v; pieces] }
    }

    pub fn validate(&self) -> Result<(), BilinearError> {
        if self.times.len() < 2 || self.values.len() + 1 != self.times.len() {
            return Err(BilinearError::Invalid("a sampled control needs n + 1 times for n values".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) || self.times.iter().any(|t| !t.is_finite()) {
            return Err(BilinearError::Invalid("sample times must be finite and strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(BilinearError::Invalid("control values must be finite".into()));
        }
        Ok(())
    }

    /// Appends `other`, which must start where `self` ends.
    pub fn extend(&mut self, other: &SampledControl) {
        debug_assert_eq!(self.times.last(), other.times.first());
        self.times.extend_from_slice(&other.times[1..]);
        self.values.extend_from_slice(&other.values);
    }

    /// `(∫ v²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.times.windows(2).zip(&self.values).map(|(w, v)| v * v * (w[1] - w[0])).sum::<f64>().sqrt()
    }
}

/// Modal states at the control breakpoints.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("a trajectory has at least its initial state")
    }
}

/// The truncated system `ψ' + diag(r) ψ + v(t) B ψ = 0` in double precision,
/// with `r_k = μ_k − shift`.
#[derive(Debug, Clone)]
pub struct BilinearSimulator {
    rates: Vec<f64>,
    coupling: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl BilinearSimulator {
    pub fn new(system: &RectangleSystem, modes: usize, shift: f64) -> Result<Self, BilinearError> {
        let coupling = system.coupling_matrix(modes)?;
        let shift = mp::from_f64(system.prec(), shift);
        let rates =
            (1..=modes).map(|k| Float::with_val(system.prec(), system.eigenvalue(k) - &shift).to_f64()).collect();
        Ok(BilinearSimulator::from_parts(rates, coupling))
    }

    pub fn from_parts(rates: Vec<f64>, coupling: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(coupling.clone());
        BilinearSimulator { rates, coupling, eigvecs: eig.eigenvectors, eigvals: eig.eigenvalues }
    }

    pub fn modes(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    fn decay(&self, psi: &mut DVector<f64>, dt: f64) {
        for (x, r) in psi.iter_mut().zip(&self.rates) {
            *x *= (-r * dt).exp();
        }
    }

    /// `ψ ← exp(−v dt B) ψ` through the eigendecomposition of `B`.
    fn kick(&self, psi: &mut DVector<f64>, v: f64, dt: f64) {
        let mut coords = self.eigvecs.tr_mul(psi);
        for (c, l) in coords.iter_mut().zip(self.eigvals.iter()) {
            *c *= (-v * dt * l).exp();
        }
        *psi = &self.eigvecs * coords;
    }
}

/// Strang splitting with `steps` substeps per control piece; pieces with
/// `v = 0` are propagated exactly in one step.
pub fn simulate_bilinear(
    sim: &BilinearSimulator,
    psi0: &[f64],
    control: &SampledControl,
    steps: usize,
) -> Result<Trajectory, BilinearError> {
    control.validate()?;
    if psi0.len() != sim.modes() {
        return Err(BilinearError::Invalid(format!(
            "initial state has {} modes, simulator {}",
            psi0.len(),
            sim.modes()
        )));
    }
    if steps == 0 {
        return Err(BilinearError::Invalid("steps must be positive".into()));
    }
    let mut psi = DVector::from_column_slice(psi0);
    let mut states = Vec::with_capacity(control.times.len());
    states.push(psi0.to_vec());
    for (w, &v) in control.times.windows(2).zip(&control.values) {
        let len = w[1] - w[0];
        if !psi.iter().all(|x| x.is_finite()) {
            return Err(BilinearError::NonFinite { t: w[0] });
        }
        if v == 0.0 {
            sim.decay(&mut psi, len);
        } else {
            let h = len / steps as f64;
            for _ in 0..steps {
                sim.decay(&mut psi, h / 2.0);
                sim.kick(&mut psi, v, h);
                sim.decay(&mut psi, h / 2.0);
            }
        }
        states.push(psi.iter().copied().collect());
    }
    if !psi.iter().all(|x| x.is_finite()) {
        return Err(BilinearError::NonFinite { t: *control.times.last().expect("validated") });
    }
    Ok(Trajectory { times: control.times.clone(), states })
}

/// [`simulate_bilinear`] with the substep count doubled until two successive
/// final states differ by at most `tol` relative to the larger of `‖ψ₀‖` and
/// the final norm. Returns the finer trajectory and its substep count.
pub fn simulate_to_tolerance(
    sim: &BilinearSimulator,
    psi0: &[f64],
    control: &SampledControl,
    tol: f64,
    max_doublings: u32,
) -> Result<(Trajectory, usize), BilinearError> {
    let mut steps = 1;
    let mut prev = simulate_bilinear(sim, psi0, control, steps)?;
    if control.values.iter().all(|v| *v == 0.0) {
        return Ok((prev, steps));
    }
    let mut richardson = f64::INFINITY;
    for _ in 0..max_doublings {
        steps *= 2;
        let next = simulate_bilinear(sim, psi0, control, steps)?;
        let diff = max_abs_diff(prev.final_state(), next.final_state());
        let scale = norm(psi0).max(norm(next.final_state())).max(f64::MIN_POSITIVE);
        // Strang splitting is second order, so the finer error is about a third of the difference.
        richardson = diff / 3.0;
        prev = next;
        if diff <= tol * scale {
            return Ok((prev, steps));
        }
    }
    Err(BilinearError::SimulationUnconverged { doublings: max_doublings, richardson })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tuning of [`reach_eigensolution`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachOptions {
    pub max_iters: usize,
    /// Target for `‖ψ(T) − Φ_j(T)‖ / e^{−μ_j T}`.
    pub tol: f64,
    /// Share of each interval carrying the control; the rest is free decay.
    pub active_fraction: f64,
    /// Control pieces per dyadic panel of the sampling grid.
    pub pieces_per_panel: usize,
    /// Relative tolerance of the step-doubling loop.
    pub sim_tol: f64,
    pub max_step_doublings: u32,
    /// Working digits of the linearized moment solves; `None` uses `max(100, 4N + 50)`.
    pub digits: Option<u32>,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            max_iters: 6,
            tol: 1e-6,
            active_fraction: 0.5,
            pieces_per_panel: 64,
            sim_tol: 1e-10,
            max_step_doublings: 10,
            digits: None,
        }
    }
}

impl ReachOptions {
    fn validate(&self) -> Result<(), BilinearError> {
        if !(self.tol > 0.0 && self.sim_tol > 0.0) {
            return Err(BilinearError::Invalid("tolerances must be positive".into()));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            return Err(BilinearError::Invalid("active fraction must lie in (0, 1]".into()));
        }
        if self.pieces_per_panel == 0 {
            return Err(BilinearError::Invalid("pieces per panel must be positive".into()));
        }
        Ok(())
    }
}

/// One iterate of the fixed-point scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateRecord {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `‖e^{s t} ψ̃(t) − φ_j‖` at `t_start`.
    pub defect: f64,
    /// `‖v‖_{L²}` of the control applied on this interval.
    pub control_l2: f64,
    /// Strang substeps per piece after step doubling.
    pub steps: usize,
}

/// Outcome of [`reach_eigensolution`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BilinearResult {
    pub mode: usize,
    pub horizon: f64,
    /// `s = μ_j − μ_1 + 1`; the applied control is `v(t) = e^{st} w(t)`.
    pub frame_shift: f64,
    /// Pieces of `w`, one per controlled iterate, in absolute time.
    pub segments: Vec<ControlSegment>,
    pub records: Vec<IterateRecord>,
    /// Defect at the start of each iterate, then at the stopping time.
    pub defects: Vec<f64>,
    /// `defects[n + 1] / defects[n]`.
    pub contraction: Vec<f64>,
    pub iterations: usize,
    /// `‖ψ(T) − e^{−μ_j T} φ_j‖ / e^{−μ_j T}`.
    pub final_error: f64,
    /// The same quantity from an independent run at doubled resolution.
    pub verified_error: f64,
    /// The same quantity with twice as many modes, when available.
    pub doubled_truncation_error: Option<f64>,
    pub tol: f64,
    pub converged: bool,
    pub diverged: bool,
}

impl BilinearResult {
    pub fn verified(&self) -> bool {
        self.converged && self.verified_error <= self.tol
    }
}

/// `φ_j + size · φ_{j+1}` as a modal vector of length `n`.
pub fn perturbed_mode(n: usize, j: usize, size: f64) -> Vec<f64> {
    let mut psi = vec![0.0; n];
    psi[j - 1] = 1.0;
    if j < n {
        psi[j] = size;
    }
    psi
}

/// Boundaries on `[t0, t1]` refined dyadically toward `t1` down to `finest`,
/// each dyadic panel split into `pieces` equal parts.
pub fn graded_breakpoints(t0: f64, t1: f64, finest: f64, pieces: usize) -> Vec<f64> {
    let mut edges = vec![t0];
    let mut d = t1 - t0;
    while d > finest {
        let next = d / 2.0;
        let (a, b) = (t1 - d, t1 - next);
        for i in 1..=pieces {
            edges.push(a + (b - a) * i as f64 / pieces as f64);
        }
        d = next;
    }
    let a = t1 - d;
    for i in 1..=pieces {
        edges.push(a + (t1 - a) * i as f64 / pieces as f64);
    }
    *edges.last_mut().expect("nonempty") = t1;
    edges.dedup();
    edges
}

/// `w(t)` as a double, evaluated at just enough precision to survive the
/// cancellation among the exponential terms.
pub fn segment_value(seg: &ControlSegment, t: f64) -> f64 {
    let full = seg.coeffs.iter().map(Float::prec).max().unwrap_or(mp::DEFAULT_PREC);
    let mut prec = 128.min(full);
    loop {
        let tt = Float::with_val(prec, t);
        let lag = Float::with_val(prec, &seg.t_end - &tt);
        let mut sum = Float::with_val(prec, 0);
        let mut biggest = Float::with_val(prec, 0);
        for (c, nu) in seg.coeffs.iter().zip(&seg.basis_freqs) {
            let e = Float::with_val(prec, -Float::with_val(prec, nu * &lag)).exp();
            let term = e * Float::with_val(prec, c);
            if Float::with_val(prec, term.abs_ref()) > biggest {
                biggest = Float::with_val(prec, term.abs_ref());
            }
            sum += term;
        }
        if biggest.is_zero() {
            return 0.0;
        }
        let lost = if sum.is_zero() {
            f64::INFINITY
        } else {
            (biggest / Float::with_val(prec, sum.abs_ref())).log2().to_f64()
        };
        if lost + 64.0 < prec as f64 || prec >= full {
            return sum.to_f64();
        }
        prec = if lost.is_finite() { (lost as u32 + 128).min(full) } else { full };
    }
}

/// Samples `v(t) = e^{st} w(t)` at piece midpoints over the segment, followed by a free piece up to `t_end`.
fn sample_interval(
    seg: Option<&ControlSegment>,
    shift: f64,
    t_start: f64,
    t_end: f64,
    finest: f64,
    pieces: usize,
) -> SampledControl {
    let Some(seg) = seg else {
        return SampledControl::zero(t_start, t_end);
    };
    let active_end = seg.t_end.to_f64();
    let times = graded_breakpoints(t_start, active_end, finest, pieces);
    let values = times
        .par_windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (shift * mid).exp() * segment_value(seg, mid)
        })
        .collect();
    let mut out = SampledControl { times, values };
    if active_end < t_end {
        out.extend(&SampledControl::zero(active_end, t_end));
    }
    out
}

/// Drives `psi0` (near `φ_j`) onto `e^{−μ_j t} φ_j` at `horizon`.
///
/// Iterate `n` acts on `[t_n, t_n + T 2^{−n−1}]`: it measures the defect
/// `η_n = e^{s t_n} ψ̃(t_n) − φ_j`, solves the linearized null-control
/// problem for it on the first `active_fraction` of the interval, and runs
/// the full bilinear simulator across the interval. After the last iterate
/// the state decays freely to `T`.
pub fn reach_eigensolution(
    system: &RectangleSystem,
    j: usize,
    psi0: &[f64],
    horizon: f64,
    opts: &ReachOptions,
) -> Result<BilinearResult, BilinearError> {
    opts.validate()?;
    let n = system.truncation;
    if j == 0 || j > n {
        return Err(BilinearError::Invalid(format!("mode {j} outside 1..={n}")));
    }
    if psi0.len() != n {
        return Err(BilinearError::Invalid(format!("initial state has {} modes, truncation is {n}", psi0.len())));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(BilinearError::Invalid("horizon must be positive".into()));
    }
    let prec = system.prec();
    let freqs = system.frequencies(n)?;
    let mu1 = freqs[0].clone();
    let frame = Float::with_val(prec, &mu1 - 1u32);
    let rates: Vec<Float> = freqs.iter().map(|m| Float::with_val(prec, m - &frame)).collect();
    let s_float = rates[j - 1].clone();
    let s = s_float.to_f64();
    let frame_f64 = frame.to_f64();
    let sim = BilinearSimulator::new(system, n, frame_f64)?;
    let finest = 0.25 / rates[n - 1].to_f64();
    let couplings = multiplication_matrix_elements(system, j)?;
    let b_coeffs: Vec<Float> = couplings.iter().map(|c| -Float::with_val(prec, c)).collect();
    let spectrum =
        SpectralSequence::new(rates.clone(), "bilinear-shifted").map_err(|e| BilinearError::Spectra(e.to_string()))?;
    let digits = opts.digits.unwrap_or_else(|| (4 * n as u32 + 50).max(100));
    let lambda = rates[n - 1].clone();

    let defect_at = |state: &[f64], t: f64| -> f64 {
        let g = (s * t).exp();
        state
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let target = if k + 1 == j { 1.0 } else { 0.0 };
                let d = g * x - target;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };

    let mut state = psi0.to_vec();
    let mut t = 0.0f64;
    let mut segments = Vec::new();
    let mut records = Vec::new();
    let mut defects = Vec::new();
    let mut plan: Vec<(Option<ControlSegment>, f64, f64)> = Vec::new();
    let mut diverged = false;
    for iter in 0..=opts.max_iters {
        let d = defect_at(&state, t);
        defects.push(d);
        let k = defects.len();
        if k >= 3 && defects[k - 1] > defects[k - 2] && defects[k - 2] > defects[k - 3] {
            diverged = true;
            break;
        }
        if d <= opts.tol || iter == opts.max_iters {
            break;
        }
        let tau = horizon * 0.5f64.powi(iter as i32 + 1);
        let t_next = t + tau;
        let xi0: Vec<Float> = (0..n)
            .map(|k| {
                let target = if k + 1 == j { (-s * t).exp() } else { 0.0 };
                mp::from_f64(prec, state[k] - target)
            })
            .collect();
        let problem = ControlProblem::new(spectrum.clone(), b_coeffs.clone(), xi0, mp::from_f64(prec, tau), n)?
            .with_digits(digits);
        let zero = Float::with_val(prec, 0);
        let active = mp::from_f64(prec, tau * opts.active_fraction);
        let mut seg = control::finite_dim_control(&problem, &lambda, (&zero, &active))?;
        let offset = mp::from_f64(seg.t_end.prec(), t);
        seg.t_start += &offset;
        seg.t_end += &offset;
        let sampled = sample_interval(Some(&seg), s, t, t_next, finest, opts.pieces_per_panel);
        let (traj, steps) = match simulate_to_tolerance(&sim, &state, &sampled, opts.sim_tol, opts.max_step_doublings) {
            Ok(out) => out,
            Err(BilinearError::NonFinite { .. } | BilinearError::SimulationUnconverged { .. }) => {
                defects.push(f64::INFINITY);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(IterateRecord {
            index: iter,
            t_start: t,
            t_end: t_next,
            defect: d,
            control_l2: sampled.l2_norm(),
            steps,
        });
        state = traj.final_state().to_vec();
        plan.push((Some(seg.clone()), t, t_next));
        segments.push(seg);
        t = t_next;
    }
    plan.push((None, t, horizon));
    let contraction = defects.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();

    let run = |sim: &BilinearSimulator, psi: &[f64], pieces: usize| -> Result<f64, BilinearError> {
        let mut control = SampledControl { times: vec![0.0], values: Vec::new() };
        for (seg, a, b) in &plan {
            if b > a {
                control.extend(&sample_interval(seg.as_ref(), s, *a, *b, finest, pieces));
            }
        }
        match simulate_to_tolerance(sim, psi, &control, opts.sim_tol, opts.max_step_doublings) {
            Ok((traj, _)) => Ok(defect_at(traj.final_state(), horizon)),
            Err(BilinearError::NonFinite { .. } | BilinearError::SimulationUnconverged { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let (final_error, verified_error, doubled_truncation_error) = if diverged {
        (f64::INFINITY, f64::INFINITY, None)
    } else {
        let doubled = match system.frequencies(2 * n) {
            Ok(_) => {
                let wide = BilinearSimulator::new(system, 2 * n, frame_f64)?;
                let mut padded = psi0.to_vec();
                padded.resize(2 * n, 0.0);
                Some(run(&wide, &padded, opts.pieces_per_panel)?)
            }
            Err(_) => None,
        };
        (run(&sim, psi0, opts.pieces_per_panel)?, run(&sim, psi0, 2 * opts.pieces_per_panel)?, doubled)
    };
    Ok(BilinearResult {
        mode: j,
        horizon,
        frame_shift: s,
        iterations: records.len(),
        segments,
        records,
        defects,
        contraction,
        final_error,
        verified_error,
        doubled_truncation_error,
        tol: opts.tol,
        converged: !diverged && final_error <= opts.tol,
        diverged,
    })
}

/// Defect after one iterate at two perturbation sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioTest {
    pub sizes: (f64, f64),
    pub defects_after_one: (f64, f64),
    /// `defects_after_one / size` at each size.
    pub contractions: (f64, f64),
    /// `ln(d₁(a)/d₁(b)) / ln(a/b)`; 2 for a purely quadratic remainder.
    pub order: f64,
    /// Defects at or below this level are indistinguishable from simulator error.
    pub floor: f64,
    /// Both defects lie above `floor`.
    pub resolved: bool,
    /// Resolved and of order above one.
    pub super_linear: bool,
}

/// Runs one iterate from `φ_j + ε φ_{j+1}` for both sizes and compares the defects.
pub fn perturbation_ratio_test(
    system: &RectangleSystem,
    j: usize,
    horizon: f64,
    sizes: (f64, f64),
    opts: &ReachOptions,
) -> Result<RatioTest, BilinearError> {
    if !(sizes.0 > 0.0 && sizes.1 > 0.0 && sizes.0 != sizes.1) {
        return Err(BilinearError::Invalid("perturbation sizes must be positive and distinct".into()));
    }
    let one = ReachOptions { max_iters: 1, tol: f64::MIN_POSITIVE, ..*opts };
    let after_one = |eps: f64| -> Result<f64, BilinearError> {
        let psi0 = perturbed_mode(system.truncation, j, eps);
        let res = reach_eigensolution(system, j, &psi0, horizon, &one)?;
        Ok(*res.defects.get(1).unwrap_or(&res.defects[0]))
    };
    let da = after_one(sizes.0)?;
    let db = after_one(sizes.1)?;
    let order = (da / db).ln() / (sizes.0 / sizes.1).ln();
    let floor = 10.0 * opts.sim_tol;
    let resolved = da > floor && db > floor;
    Ok(RatioTest {
        sizes,
        defects_after_one: (da, db),
        contractions: (da / sizes.0, db / sizes.1),
        order,
        floor,
        resolved,
        super_linear: resolved && order > 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 192;

    fn unit() -> Float {
        Float::with_val(PREC, 1)
    }

    fn pi2() -> f64 {
        std::f64::consts::PI * std::f64::consts::PI
    }

    fn rel(a: &Float, b: f64) -> f64 {
        ((a.to_f64() - b) / b).abs()
    }

    #[test]
    fn off_diagonal_x2_value() {
        let v = sine_pair_closed_form(&Polynomial::monomial(2), &unit(), 1, 2).unwrap();
        assert!(rel(&v.clone().abs(), 8.0 / (9.0 * pi2())) < 1e-15);
        assert!((v.abs().to_f64() - 0.0900633).abs() < 1e-7);
    }

    #[test]
    fn diagonal_x2_value() {
        let v = sine_pair_closed_form(&Polynomial::monomial(2), &unit(), 1, 1).unwrap();
        let expected = (2.0 * pi2() - 3.0) / (12.0 * pi2());
        assert!(rel(&v, expected) < 1e-15);
        assert!((v.to_f64() - 0.1413364).abs() < 1e-7);
    }

    #[test]
    fn x2_sign_alternates() {
        for k in 1..8u64 {
            for l in 1..8u64 {
                if k == l {
                    continue;
                }
                let v = sine_pair_closed_form(&Polynomial::monomial(2), &unit(), k, l).unwrap().to_f64();
                let sign = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                let magnitude = 4.0 * (k * l) as f64 / (((k * k) as f64 - (l * l) as f64).powi(2) * pi2());
                assert!((v - sign * magnitude).abs() < 1e-15, "({k},{l}): {v}");
            }
        }
    }

    #[test]
    fn cosine_moment_oracle() {
        for n in 1..10u64 {
            let c = cosine_moments(n, &unit(), 2);
            let expected = 2.0 * if n % 2 == 0 { 1.0 } else { -1.0 } / ((n * n) as f64 * pi2());
            assert!((c[2].to_f64() - expected).abs() < 1e-16);
            assert!(c[0].is_zero());
        }
    }

    #[test]
    fn constant_weight_is_orthogonal() {
        let one = Polynomial::new(vec![1.0]);
        assert!(sine_pair_closed_form(&one, &unit(), 1, 2).unwrap().is_zero());
        let d = sine_pair_closed_form(&one, &unit(), 3, 3).unwrap().to_f64();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_interval() {
        let len = Float::with_val(PREC, 3);
        let v = sine_pair_closed_form(&Polynomial::monomial(2), &len, 1, 2).unwrap();
        let u = sine_pair_closed_form(&Polynomial::monomial(2), &unit(), 1, 2).unwrap();
        assert!(rel(&v, u.to_f64() * 27.0) < 1e-14);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let q = Polynomial::new(vec![0.5, -1.0, 2.0, 0.0, 1.0]);
        let agreement = cross_check_paths(&q, &Float::with_val(128, 1.5), 8).unwrap();
        assert!(agreement.max_relative < 1e-20, "{agreement:?}");
    }

    #[test]
    fn high_degree_uses_quadrature() {
        let q = Polynomial::monomial(6);
        assert!(sine_pair_closed_form(&q, &unit(), 1, 2).is_none());
        let v = sine_pair_integral(&q, &Float::with_val(128, 1), 1, 1).unwrap();
        // ∫ x⁶ sin²(πx) = 1/14 − ½ ∫ x⁶ cos(2πx), by numerical reference
        let reference = simpson(|x| x.powi(6) * (std::f64::consts::PI * x).sin().powi(2), 20000);
        assert!((v.to_f64() - reference).abs() < 1e-12);
    }

    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut acc = f(0.0) + f(1.0);
        for i in 1..n {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn parse_weights() {
        let q = QSpec::parse("x^2*y^2").unwrap();
        assert_eq!(q, QSpec::x2y2());
        let q = QSpec::parse("(x^2 + 1) * (2*y - y^3)").unwrap();
        let x = Float::with_val(64, 0.5);
        let y = Float::with_val(64, 0.25);
        let value = (q.qx.eval(&x) * q.qy.eval(&y)).to_f64();
        assert!((value - 1.25 * (0.5 - 0.015625)).abs() < 1e-15);
        assert!(QSpec::parse("x + y").is_err());
        assert!(QSpec::parse("x^2*(").is_err());
        assert_eq!(QSpec::parse("-x^2").unwrap().qx.coeffs, vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn coupling_is_product_of_line_integrals() {
        let sys = RectangleSystem::standard(6, PREC).unwrap();
        let b = SideLength::cube_root_of_two().value(PREC);
        for (j, k) in [(1, 1), (1, 2), (2, 5)] {
            let (lj, mj) = sys.pair(j);
            let (lk, mk) = sys.pair(k);
            let ix = sine_pair_closed_form(&Polynomial::monomial(2), &unit(), lj, lk).unwrap().to_f64();
            let iy = sine_pair_closed_form(&Polynomial::monomial(2), &b, mj, mk).unwrap().to_f64();
            let expected = 4.0 / b.to_f64() * ix * iy;
            let got = sys.coupling(j, k).unwrap().to_f64();
            assert!((got - expected).abs() <= 1e-14 * expected.abs(), "({j},{k})");
        }
    }

    #[test]
    fn bilaplace_is_square_of_laplace() {
        let sys = RectangleSystem::standard(20, PREC).unwrap();
        let lap = spectra::generate_rectangle_laplacian(&sys.a_len, &sys.b_len, 40, PREC).unwrap();
        for (k, pair) in sys.spectrum.pairs.iter().enumerate() {
            let i = lap.pairs.iter().position(|p| p == pair).unwrap();
            let sq = Float::with_val(PREC, lap.raw_values[i].square_ref());
            assert!(spectra::values_coincide(&sq, &sys.spectrum.raw_values[k]));
        }
    }

    #[test]
    fn spreading_on_standard_weight() {
        let sys = RectangleSystem::standard(50, PREC).unwrap();
        let cert = verify_spreading(&sys, 1, 0.5).unwrap();
        assert!(cert.c_bj.is_finite() && cert.c_bj > 0);
        assert_eq!(cert.checked, 50);
        assert!(cert.attained_at <= 5, "{}", cert.attained_at);
    }

    #[test]
    fn spreading_fails_on_vanishing_pairing() {
        let q = QSpec::new(Polynomial::new(vec![1.0]), Polynomial::monomial(2));
        let sys = RectangleSystem::new(SideLength::one(), SideLength::cube_root_of_two(), q, 10, PREC).unwrap();
        let err = verify_spreading(&sys, 1, 0.5).unwrap_err();
        assert!(matches!(err, BilinearError::ZeroCoupling { j: 1, .. }), "{err}");
    }

    #[test]
    fn roth_scan_irrational_and_square() {
        let sys = RectangleSystem::standard(200, PREC).unwrap();
        let cert = roth_gap_scan(&sys, 1.0).unwrap();
        assert!(cert.fitted_c > 0);
        let small = RectangleSystem::standard(50, PREC).unwrap();
        let c50 = roth_gap_scan(&small, 1.0).unwrap().fitted_c;
        assert!(cert.fitted_c <= c50);
        let square = RectangleSystem::new(SideLength::one(), SideLength::one(), QSpec::x2y2(), 20, PREC).unwrap();
        match roth_gap_scan(&square, 1.0) {
            Err(BilinearError::RepeatedEigenvalue { pairs, .. }) => {
                assert!(pairs.contains(&(1, 2)) && pairs.contains(&(2, 1)), "{pairs:?}");
            }
            other => panic!("expected a multiplicity witness, got {other:?}"),
        }
    }

    fn small_sim() -> (RectangleSystem, BilinearSimulator) {
        let sys = RectangleSystem::standard(6, PREC).unwrap();
        let shift = sys.eigenvalue(1).to_f64() - 1.0;
        let sim = BilinearSimulator::new(&sys, 6, shift).unwrap();
        (sys, sim)
    }

    #[test]
    fn free_decay_is_exact() {
        let (_, sim) = small_sim();
        let psi0: Vec<f64> = (0..6).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let traj = simulate_bilinear(&sim, &psi0, &SampledControl::constant(0.0, 0.3, 7, 0.0), 4).unwrap();
        for (k, x) in traj.final_state().iter().enumerate() {
            let exponent = sim.rates()[k] * 0.3;
            let exact = psi0[k] * (-exponent).exp();
            // exp amplifies the rounding of its argument by the argument's size
            let tol = 8.0 * f64::EPSILON * (1.0 + exponent) * exact.abs();
            assert!((x - exact).abs() <= tol, "mode {k}");
        }
    }

    #[test]
    fn eigenstate_stays_on_eigensolution() {
        let (_, sim) = small_sim();
        let psi0 = perturbed_mode(6, 2, 0.0);
        let traj = simulate_bilinear(&sim, &psi0, &SampledControl::zero(0.0, 0.5), 1).unwrap();
        let expected = (-sim.rates()[1] * 0.5).exp();
        assert!((traj.final_state()[1] - expected).abs() <= 1e-15 * expected);
        assert!(traj.final_state().iter().enumerate().all(|(k, x)| k == 1 || *x == 0.0));
    }

    /// First-order Duhamel oracle for a constant control `v`:
    /// `ψ_k(t) ≈ e^{−r_k t} ψ0_k − v Σ_i B_ki ψ0_i ∫_0^t e^{−r_k (t−s) − r_i s} ds`.
    fn duhamel(sim: &BilinearSimulator, psi0: &[f64], v: f64, t: f64) -> Vec<f64> {
        let r = sim.rates();
        (0..psi0.len())
            .map(|k| {
                let mut x = (-r[k] * t).exp() * psi0[k];
                for i in 0..psi0.len() {
                    let integral = if (r[k] - r[i]).abs() < 1e-12 {
                        t * (-r[k] * t).exp()
                    } else {
                        ((-r[i] * t).exp() - (-r[k] * t).exp()) / (r[k] - r[i])
                    };
                    x -= v * sim.coupling()[(k, i)] * psi0[i] * integral;
                }
                x
            })
            .collect()
    }

    #[test]
    fn first_order_consistency() {
        let (_, sim) = small_sim();
        let psi0 = perturbed_mode(6, 1, 0.3);
        let t = 0.01;
        let err = |v: f64| {
            let control = SampledControl::constant(0.0, t, 1, v);
            let (traj, _) = simulate_to_tolerance(&sim, &psi0, &control, 1e-11, 20).unwrap();
            max_abs_diff(traj.final_state(), &duhamel(&sim, &psi0, v, t))
        };
        let (e1, e2) = (err(0.4), err(0.1));
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "e1 {e1:e} e2 {e2:e}");
    }

    #[test]
    fn step_doubling_converges() {
        let (_, sim) = small_sim();
        let psi0 = perturbed_mode(6, 1, 0.1);
        let control = SampledControl::constant(0.0, 0.05, 3, 2.0);
        let (_, steps) = simulate_to_tolerance(&sim, &psi0, &control, 1e-9, 16).unwrap();
        assert!(steps > 1);
        let err = simulate_to_tolerance(&sim, &psi0, &control, 1e-30, 2).unwrap_err();
        assert!(matches!(err, BilinearError::SimulationUnconverged { doublings: 2, .. }));
    }

    #[test]
    fn graded_grid_shape() {
        let g = graded_breakpoints(0.0, 1.0, 0.01, 4);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(1.0 - g[g.len() - 2] <= 0.01 / 4.0 + 1e-15);
    }

    #[test]
    fn exact_eigenstate_needs_no_control() {
        let sys = RectangleSystem::standard(8, PREC).unwrap();
        let psi0 = perturbed_mode(8, 1, 0.0);
        let res = reach_eigensolution(&sys, 1, &psi0, 0.5, &ReachOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!(res.segments.is_empty());
        assert!(res.final_error < 1e-14);
    }

    #[test]
    fn reach_small_truncation() {
        let sys = RectangleSystem::standard(8, PREC).unwrap();
        let psi0 = perturbed_mode(8, 1, 1e-3);
        let res = reach_eigensolution(&sys, 1, &psi0, 0.5, &ReachOptions::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!(res.final_error <= res.tol && res.verified_error <= 1e-4);
        assert!(res.defects[1] < res.defects[0]);
    }

    #[test]
    fn unstable_target_reports_divergence() {
        let sys = RectangleSystem::standard(8, PREC).unwrap();
        let mut psi0 = perturbed_mode(8, 2, 1e-3);
        psi0[0] = 1e-3;
        let res = reach_eigensolution(&sys, 2, &psi0, 0.5, &ReachOptions::default()).unwrap();
        assert!(res.diverged && !res.converged);
        assert!(res.final_error.is_infinite());
        assert!((res.defects[0] - 2f64.sqrt() * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn ratio_test_flags_unresolved_defects() {
        let sys = RectangleSystem::standard(8, PREC).unwrap();
        let t = perturbation_ratio_test(&sys, 1, 0.5, (1e-3, 1e-4), &ReachOptions::default()).unwrap();
        assert!(t.defects_after_one.0 < 1e-3 && t.defects_after_one.1 < 1e-4);
        assert_eq!(t.resolved, t.defects_after_one.0 > t.floor && t.defects_after_one.1 > t.floor);
        assert!(!t.super_linear || t.order > 1.0);
    }
}
