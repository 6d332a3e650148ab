//! Spectral sequences: rectangle lattices, the perturbed square, densification.
//!
//! Finite sequences are stored as [`SpectralSequence`]. Sequences that must be
//! queried far beyond any stored prefix implement [`Spectrum`], which also
//! covers [`PerturbedSquare`], an exact oracle for `μ_k = λ_k² − 1/k + 2`
//! built on the lattice counter in [`crate::lattice`].

use crate::lattice;
use crate::mp;
use rug::ops::Pow;
use rug::Float;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("values are not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("lattice enumeration exceeded its bound at Γ = {gamma}")]
    LatticeOverflow { gamma: String },
    #[error("index {index} requested but the sequence has only {len} entries")]
    OutOfRange { index: u64, len: u64 },
    #[error("index arithmetic overflowed near Γ = {gamma}")]
    IndexOverflow { gamma: String },
}

/// Read-only access to a positive increasing sequence by 1-based index.
pub trait Spectrum: Send + Sync {
    fn prec(&self) -> u32;
    /// Number of entries, or `None` for an unbounded oracle.
    fn len(&self) -> Option<u64>;
    fn value(&self, k: u64) -> Result<Float, SpectraError>;
    /// `#{k : value(k) ≤ gamma}`.
    fn count_le(&self, gamma: &Float) -> Result<u64, SpectraError>;
    fn tag(&self) -> String;

    fn values(&self, start: u64, count: usize) -> Result<Vec<Float>, SpectraError> {
        (0..count as u64).map(|i| self.value(start + i)).collect()
    }

    fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// `k = N(gamma)` together with the entries `k − before + 1 ..= k + after`
    /// (clipped to the valid range), returned as `(k, first_index, values)`.
    fn window_around(&self, gamma: &Float, before: u64, after: u64) -> Result<(u64, u64, Vec<Float>), SpectraError> {
        let k = self.count_le(gamma)?;
        let start = (k + 1).saturating_sub(before).max(1);
        let mut end = k + after;
        if let Some(len) = self.len() {
            end = end.min(len);
        }
        let values = if end >= start { self.values(start, (end - start + 1) as usize)? } else { Vec::new() };
        Ok((k, start, values))
    }
}

/// Strictly increasing positive frequencies with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSequence {
    values: Vec<Float>,
    labels: Option<Vec<(u64, u64)>>,
    generator_tag: String,
}

impl SpectralSequence {
    pub fn new(values: Vec<Float>, generator_tag: impl Into<String>) -> Result<Self, SpectraError> {
        Self::with_labels(values, None, generator_tag)
    }

    pub fn with_labels(
        values: Vec<Float>,
        labels: Option<Vec<(u64, u64)>>,
        generator_tag: impl Into<String>,
    ) -> Result<Self, SpectraError> {
        if values.is_empty() {
            return Err(SpectraError::Invalid("a spectral sequence needs at least one value".into()));
        }
        if !(values[0].is_finite() && values[0] > 0) {
            return Err(SpectraError::Invalid("frequencies must be positive and finite".into()));
        }
        if let Some(i) = values.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(SpectraError::NotIncreasing { index: i + 1 });
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(SpectraError::Invalid("labels and values differ in length".into()));
            }
        }
        Ok(SpectralSequence { values, labels, generator_tag: generator_tag.into() })
    }

    pub fn from_f64(values: &[f64], prec: u32, tag: &str) -> Result<Self, SpectraError> {
        Self::new(values.iter().map(|&v| Float::with_val(prec, v)).collect(), tag)
    }

    pub fn values_slice(&self) -> &[Float] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[(u64, u64)]> {
        self.labels.as_deref()
    }

    pub fn generator_tag(&self) -> &str {
        &self.generator_tag
    }

    pub fn first_value(&self) -> &Float {
        &self.values[0]
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    /// The first `n` entries as a new sequence.
    pub fn prefix(&self, n: usize) -> SpectralSequence {
        let n = n.min(self.values.len()).max(1);
        SpectralSequence {
            values: self.values[..n].to_vec(),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            generator_tag: self.generator_tag.clone(),
        }
    }
}

impl Spectrum for SpectralSequence {
    fn prec(&self) -> u32 {
        self.values.iter().map(Float::prec).max().unwrap_or(mp::DEFAULT_PREC)
    }

    fn len(&self) -> Option<u64> {
        Some(self.values.len() as u64)
    }

    fn value(&self, k: u64) -> Result<Float, SpectraError> {
        if k == 0 || k > self.values.len() as u64 {
            return Err(SpectraError::OutOfRange { index: k, len: self.values.len() as u64 });
        }
        Ok(self.values[(k - 1) as usize].clone())
    }

    fn count_le(&self, gamma: &Float) -> Result<u64, SpectraError> {
        Ok(counting_function(self, gamma) as u64)
    }

    fn tag(&self) -> String {
        self.generator_tag.clone()
    }
}

/// `#{k : values[k] ≤ gamma}` by binary search.
pub fn counting_function(seq: &SpectralSequence, gamma: &Float) -> usize {
    seq.values.partition_point(|v| v <= gamma)
}

/// A rectangle side length, kept symbolic when irrational.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SideLength {
    /// A decimal or `p/q` literal.
    Exact { literal: String },
    /// `radicand^(1/index)`, evaluated at whatever precision is requested.
    Root { radicand: u32, index: u32 },
}

impl SideLength {
    pub fn one() -> Self {
        SideLength::Exact { literal: "1".into() }
    }

    pub fn cube_root_of_two() -> Self {
        SideLength::Root { radicand: 2, index: 3 }
    }

    /// Accepts `1.5`, `3/2` or `2^(1/3)`.
    pub fn parse(s: &str) -> Result<Self, SpectraError> {
        let t = s.trim().replace(' ', "");
        if let Some((base, exp)) = t.split_once('^') {
            let exp = exp.trim_start_matches('(').trim_end_matches(')');
            let (one, index) =
                exp.split_once('/').ok_or_else(|| SpectraError::Invalid(format!("expected base^(1/n), got `{s}`")))?;
            let radicand: u32 = base.parse().map_err(|_| SpectraError::Invalid(format!("bad radicand in `{s}`")))?;
            let index: u32 = index.parse().map_err(|_| SpectraError::Invalid(format!("bad root index in `{s}`")))?;
            if one != "1" || radicand == 0 || index == 0 {
                return Err(SpectraError::Invalid(format!("expected base^(1/n) with positive parts, got `{s}`")));
            }
            return Ok(SideLength::Root { radicand, index });
        }
        let v = mp::parse(64, &t).map_err(SpectraError::Invalid)?;
        if !(v > 0) {
            return Err(SpectraError::Invalid(format!("side length must be positive, got `{s}`")));
        }
        Ok(SideLength::Exact { literal: t })
    }

    pub fn value(&self, prec: u32) -> Float {
        match self {
            SideLength::Exact { literal } => mp::parse(prec, literal).expect("validated at construction"),
            SideLength::Root { radicand, index } => {
                let r = Float::with_val(prec, *radicand);
                let e = Float::with_val(prec, 1) / *index;
                Float::with_val(prec, r.pow(&e))
            }
        }
    }
}

impl fmt::Display for SideLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SideLength::Exact { literal } => write!(f, "{literal}"),
            SideLength::Root { radicand, index } => write!(f, "{radicand}^(1/{index})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    Laplacian,
    BiLaplacian,
}

/// Sorted rectangle eigenvalues with their lattice pairs, repeats allowed.
#[derive(Debug, Clone)]
pub struct LatticeSpectrum {
    pub raw_values: Vec<Float>,
    pub pairs: Vec<(u64, u64)>,
    pub kind: LatticeKind,
    pub a_len: SideLength,
    pub b_len: SideLength,
    prec: u32,
}

impl LatticeSpectrum {
    pub fn prec(&self) -> u32 {
        self.prec
    }

    pub fn len(&self) -> usize {
        self.raw_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_values.is_empty()
    }

    /// Closed-form eigenvalue for a lattice pair.
    pub fn closed_form(&self, pair: (u64, u64)) -> Float {
        let q = quadratic_form(pair, &self.a_len.value(self.prec), &self.b_len.value(self.prec));
        eigen_from_form(self.kind, &q)
    }

    /// Runs of equal values, longest first then by value: `(value, pairs)`.
    pub fn multiplicities(&self) -> Vec<(Float, Vec<(u64, u64)>)> {
        let mut runs: Vec<(Float, Vec<(u64, u64)>)> = Vec::new();
        for (v, p) in self.raw_values.iter().zip(&self.pairs) {
            match runs.last_mut() {
                Some((last, ps)) if values_coincide(last, v) => ps.push(*p),
                _ => runs.push((v.clone(), vec![*p])),
            }
        }
        runs
    }

    /// The strictly increasing sequence, or the first repeated value.
    pub fn to_sequence(&self) -> Result<SpectralSequence, SpectraError> {
        for (i, w) in self.raw_values.windows(2).enumerate() {
            if values_coincide(&w[0], &w[1]) {
                return Err(SpectraError::NotIncreasing { index: i + 1 });
            }
        }
        SpectralSequence::with_labels(
            self.raw_values.clone(),
            Some(self.pairs.clone()),
            format!("rectangle-{}({},{})", kind_name(self.kind), self.a_len, self.b_len),
        )
    }
}

fn kind_name(kind: LatticeKind) -> &'static str {
    match kind {
        LatticeKind::Laplacian => "laplacian",
        LatticeKind::BiLaplacian => "bilaplacian",
    }
}

/// Equality up to the last few bits of the working precision.
pub fn values_coincide(a: &Float, b: &Float) -> bool {
    let prec = a.prec().min(b.prec());
    let diff = Float::with_val(prec, a - b).abs();
    let scale = Float::with_val(prec, a.abs_ref()).max(&Float::with_val(prec, b.abs_ref()));
    diff <= scale >> (prec.saturating_sub(16))
}

fn quadratic_form(pair: (u64, u64), a: &Float, b: &Float) -> Float {
    let prec = a.prec();
    let l = Float::with_val(prec, pair.0);
    let m = Float::with_val(prec, pair.1);
    let x = Float::with_val(prec, l.square() / Float::with_val(prec, a.square_ref()));
    let y = Float::with_val(prec, m.square() / Float::with_val(prec, b.square_ref()));
    x + y
}

fn eigen_from_form(kind: LatticeKind, q: &Float) -> Float {
    let prec = q.prec();
    let pi2 = mp::pi(prec).square();
    let lap = Float::with_val(prec, &pi2 * q);
    match kind {
        LatticeKind::Laplacian => lap,
        LatticeKind::BiLaplacian => lap.square(),
    }
}

fn generate_rectangle(
    a_len: &SideLength,
    b_len: &SideLength,
    count: usize,
    kind: LatticeKind,
    prec: u32,
) -> Result<LatticeSpectrum, SpectraError> {
    if count == 0 {
        return Err(SpectraError::Invalid("count must be at least 1".into()));
    }
    let a = a_len.value(prec);
    let b = b_len.value(prec);
    let (af, bf) = (a.to_f64(), b.to_f64());
    // Weyl: #{q ≤ Q} ≈ πabQ/4, so Q = 4·count/(πab) is the count-th candidate.
    let mut cutoff = 1.5 * (4.0 * count as f64 / (std::f64::consts::PI * af * bf) + 2.0 / (af * af) + 2.0 / (bf * bf));
    const MAX_PAIRS: usize = 50_000_000;
    loop {
        let qcut = Float::with_val(prec, cutoff);
        let mut found: Vec<(Float, (u64, u64))> = Vec::new();
        let l_max = (af * cutoff.sqrt()).floor() as u64 + 1;
        for l in 1..=l_max {
            let rest = cutoff - (l as f64 / af).powi(2);
            if rest < -1e-9 * cutoff {
                break;
            }
            let m_max = (bf * rest.max(0.0).sqrt()).floor() as u64 + 1;
            for m in 1..=m_max {
                let q = quadratic_form((l, m), &a, &b);
                if q <= qcut {
                    found.push((q, (l, m)));
                }
            }
            if found.len() > MAX_PAIRS {
                return Err(SpectraError::LatticeOverflow { gamma: format!("{cutoff:e}") });
            }
        }
        if found.len() >= count {
            found.sort_by(|x, y| mp::cmp(&x.0, &y.0).then(x.1.cmp(&y.1)));
            found.truncate(count);
            let (raw_values, pairs) = found.into_iter().map(|(q, p)| (eigen_from_form(kind, &q), p)).unzip();
            return Ok(LatticeSpectrum { raw_values, pairs, kind, a_len: a_len.clone(), b_len: b_len.clone(), prec });
        }
        cutoff *= 1.5;
    }
}

/// The `count` smallest Dirichlet Laplacian eigenvalues `π²(ℓ²/a² + m²/b²)`.
pub fn generate_rectangle_laplacian(
    a_len: &SideLength,
    b_len: &SideLength,
    count: usize,
    prec: u32,
) -> Result<LatticeSpectrum, SpectraError> {
    generate_rectangle(a_len, b_len, count, LatticeKind::Laplacian, prec)
}

/// The `count` smallest Dirichlet bi-Laplacian eigenvalues `π⁴(ℓ²/a² + m²/b²)²`.
pub fn generate_rectangle_bilaplacian(
    a_len: &SideLength,
    b_len: &SideLength,
    count: usize,
    prec: u32,
) -> Result<LatticeSpectrum, SpectraError> {
    generate_rectangle(a_len, b_len, count, LatticeKind::BiLaplacian, prec)
}

/// `μ_k = λ_k² − 1/k + 2` over the sorted unit-square Laplacian `λ_k`.
pub fn generate_perturbed_square_example(count: usize, prec: u32) -> Result<SpectralSequence, SpectraError> {
    let lap = generate_rectangle_laplacian(&SideLength::one(), &SideLength::one(), count, prec)?;
    let oracle = PerturbedSquare::new(prec);
    let values =
        lap.pairs.iter().enumerate().map(|(i, &(l, m))| oracle.from_sum(l * l + m * m, (i + 1) as u64)).collect();
    SpectralSequence::with_labels(values, Some(lap.pairs), PerturbedSquare::TAG)
}

/// Unbounded exact oracle for the perturbed-square sequence.
///
/// `μ_k = π⁴ s_k² − 1/k + 2`, where `s_k` is the `k`-th smallest sum of two
/// positive squares. Lookups cost `O(√s_k)` integer steps.
#[derive(Debug, Clone)]
pub struct PerturbedSquare {
    prec: u32,
}

impl PerturbedSquare {
    pub const TAG: &'static str = "perturbed-square";

    pub fn new(prec: u32) -> Self {
        PerturbedSquare { prec }
    }

    fn pi4(&self) -> Float {
        mp::pi(self.prec).pow(4u32)
    }

    fn from_sum(&self, s: u64, k: u64) -> Float {
        let s = Float::with_val(self.prec.max(128), s);
        let lam2 = Float::with_val(self.prec, self.pi4() * s.square());
        let inv = Float::with_val(self.prec, 1) / Float::with_val(self.prec, k);
        lam2 - inv + 2u32
    }
}

impl PerturbedSquare {
    /// Largest `S` with `π⁴S² + 1 ≤ gamma`, or `None` below the first block.
    fn top_sum(&self, gamma: &Float) -> Result<Option<u64>, SpectraError> {
        let prec = self.prec;
        let overflow = || SpectraError::IndexOverflow { gamma: mp::to_decimal(gamma, 12) };
        let pi4 = self.pi4();
        let shifted = Float::with_val(prec, gamma - 1u32);
        if shifted < Float::with_val(prec, &pi4 * 4u32) {
            return Ok(None);
        }
        let ratio = Float::with_val(prec, &shifted / &pi4).sqrt();
        let mut s_top = mp::floor_u64(&ratio).ok_or_else(overflow)?;
        let fits = |s: u64| Float::with_val(prec, &pi4 * Float::with_val(prec.max(128), s).square()) + 1u32 <= *gamma;
        while s_top > 0 && !fits(s_top) {
            s_top -= 1;
        }
        while fits(s_top + 1) {
            s_top += 1;
        }
        if s_top > (1u64 << 62) {
            return Err(overflow());
        }
        Ok(Some(s_top))
    }

    /// Largest `k` in the block of `S` (indices `before + 1 ..= before + block`)
    /// with `π⁴S² + 2 − 1/k ≤ gamma`, or `before` when there is none.
    fn count_in_block(&self, gamma: &Float, s_top: u64, before: u64, block: u64) -> u64 {
        if block == 0 || self.from_sum(s_top, before + 1) > *gamma {
            return before;
        }
        let (mut lo, mut hi) = (before + 1, before + block);
        if self.from_sum(s_top, hi) <= *gamma {
            return hi;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.from_sum(s_top, mid) <= *gamma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

impl Spectrum for PerturbedSquare {
    fn prec(&self) -> u32 {
        self.prec
    }

    fn len(&self) -> Option<u64> {
        None
    }

    fn value(&self, k: u64) -> Result<Float, SpectraError> {
        if k == 0 {
            return Err(SpectraError::OutOfRange { index: 0, len: 0 });
        }
        Ok(self.from_sum(lattice::kth_sum(k), k))
    }

    fn values(&self, start: u64, count: usize) -> Result<Vec<Float>, SpectraError> {
        if start == 0 {
            return Err(SpectraError::OutOfRange { index: 0, len: 0 });
        }
        let sums = lattice::sums_from(start, count);
        Ok(sums.iter().enumerate().map(|(i, &s)| self.from_sum(s, start + i as u64)).collect())
    }

    /// Every `k` with `s_k = S` satisfies `π⁴S² + 1 ≤ μ_k < π⁴S² + 2`, and
    /// consecutive sums are at least one apart, so only the block of the
    /// largest admissible `S` needs an index-level comparison.
    fn count_le(&self, gamma: &Float) -> Result<u64, SpectraError> {
        let Some(s_top) = self.top_sum(gamma)? else {
            return Ok(u64::from(self.from_sum(2, 1) <= *gamma));
        };
        let (before, through) = lattice::count_le_pair(s_top);
        Ok(self.count_in_block(gamma, s_top, before, through - before))
    }

    /// Uses one lattice window instead of per-index lookups, so the cost is a
    /// few `O(√s)` walks even when `N(gamma)` is astronomically large.
    fn window_around(&self, gamma: &Float, before: u64, after: u64) -> Result<(u64, u64, Vec<Float>), SpectraError> {
        let Some(s_top) = self.top_sum(gamma)? else {
            let k = u64::from(self.from_sum(2, 1) <= *gamma);
            let start = (k + 1).saturating_sub(before).max(1);
            let count = (k + after + 1 - start) as usize;
            return Ok((k, start, self.values(start, count)?));
        };
        let (below, through) = lattice::count_le_pair(s_top);
        let k = self.count_in_block(gamma, s_top, below, through - below);
        let start = (k + 1).saturating_sub(before).max(1);
        let end = k + after;
        let mut width = 2 * (before + after) + 64;
        loop {
            let lo = s_top.saturating_sub(width);
            let sums = lattice::sums_in(lo, s_top + width);
            // Every sum in (lo, S] is present, so the window's first index
            // follows from N(S) without another walk.
            let up_to_top = sums.partition_point(|&x| x <= s_top) as u64;
            let first = through - up_to_top + 1;
            let last = first + sums.len() as u64 - 1;
            if first <= start && last >= end {
                let skip = (start - first) as usize;
                let values = sums[skip..skip + (end - start + 1) as usize]
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| self.from_sum(s, start + i as u64))
                    .collect();
                return Ok((k, start, values));
            }
            width *= 2;
        }
    }

    fn tag(&self) -> String {
        Self::TAG.to_string()
    }
}

/// Appendix-style densification result.
#[derive(Debug, Clone)]
pub struct Densified {
    pub sequence: SpectralSequence,
    /// `⌊k^p⌋` for each source index `k`, `p = (1 − 2a)/(2a)`.
    pub block_sizes: Vec<u64>,
}

/// Inserts `⌊k^p⌋ − 1` equally spaced points between `μ_k` and `μ_{k+1}`.
///
/// Blocks are produced for every `k` that has a successor in `seq`. Powers
/// within `2^{-prec/2}` of an integer snap to it, so exact integer powers such
/// as `16¹` are never floored down by rounding.
pub fn densify_sequence(seq: &SpectralSequence, a: &Float) -> Result<Densified, SpectraError> {
    if !(*a > 0 && *a < 0.5) {
        return Err(SpectraError::Invalid(format!("densification needs 0 < a < 1/2, got {}", mp::to_decimal(a, 6))));
    }
    let prec = seq.prec().max(a.prec());
    let p = (Float::with_val(prec, 1) - Float::with_val(prec, a * 2u32)) / Float::with_val(prec, a * 2u32);
    let vals = seq.values_slice();
    let mut out = Vec::new();
    let mut sizes = Vec::with_capacity(vals.len().saturating_sub(1));
    for k in 1..vals.len() {
        let kp = mp::powf(&Float::with_val(prec, k as u64), &p);
        let n = snap_floor(&kp).ok_or_else(|| SpectraError::Invalid(format!("block size overflow at k = {k}")))?;
        if out.len() as u64 + n > MAX_DENSIFIED {
            return Err(SpectraError::Invalid(format!(
                "densified sequence would exceed {MAX_DENSIFIED} points at k = {k}"
            )));
        }
        let gap = Float::with_val(prec, &vals[k] - &vals[k - 1]);
        let step = Float::with_val(prec, &gap / &kp);
        for l in 0..n {
            out.push(Float::with_val(prec, &vals[k - 1] + Float::with_val(prec, &step * l)));
        }
        sizes.push(n);
    }
    if out.is_empty() {
        return Err(SpectraError::Invalid("densification needs at least two input values".into()));
    }
    let tag = format!("densified(a={})", mp::to_decimal(a, 17));
    Ok(Densified { sequence: SpectralSequence::new(out, tag)?, block_sizes: sizes })
}

/// Upper bound on the number of points a densification may produce.
pub const MAX_DENSIFIED: u64 = 20_000_000;

fn snap_floor(x: &Float) -> Option<u64> {
    let prec = x.prec();
    let nearest = Float::with_val(prec, x.round_ref());
    let tol = Float::with_val(prec, x.abs_ref()) >> (prec / 2);
    if Float::with_val(prec, x - &nearest).abs() <= tol {
        return mp::floor_u64(&nearest);
    }
    mp::floor_u64(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: u32 = 256;

    fn one() -> SideLength {
        SideLength::one()
    }

    #[test]
    fn unit_square_laplacian_prefix() {
        let s = generate_rectangle_laplacian(&one(), &one(), 6, P).unwrap();
        let pi2 = mp::pi(P).square();
        let scaled: Vec<f64> = s.raw_values.iter().map(|v| Float::with_val(P, v / &pi2).to_f64()).collect();
        assert_eq!(scaled, vec![2.0, 5.0, 5.0, 8.0, 10.0, 10.0]);
        assert_eq!(s.pairs[1], (1, 2));
        assert_eq!(s.pairs[2], (2, 1));
        let single = generate_rectangle_laplacian(&one(), &one(), 1, P).unwrap();
        assert_eq!(single.pairs, vec![(1, 1)]);
        assert_eq!(single.raw_values[0], Float::with_val(P, &pi2 * 2u32));
    }

    #[test]
    fn multiplicity_six_witness() {
        let s = generate_rectangle_laplacian(&one(), &one(), 400, P).unwrap();
        let pi2 = mp::pi(P).square();
        let target = Float::with_val(P, &pi2 * 325u32);
        let run = s.multiplicities().into_iter().find(|(v, _)| values_coincide(v, &target)).unwrap();
        let mut pairs = run.1;
        pairs.sort();
        assert_eq!(pairs, vec![(1, 18), (6, 17), (10, 15), (15, 10), (17, 6), (18, 1)]);
    }

    #[test]
    fn bilaplacian_examples() {
        let b = generate_rectangle_bilaplacian(&one(), &SideLength::cube_root_of_two(), 1, P).unwrap();
        assert!((b.raw_values[0].to_f64() - 258.79).abs() < 0.01, "{}", b.raw_values[0]);
        let sq = generate_rectangle_bilaplacian(&one(), &one(), 3, P).unwrap();
        let pi4 = mp::pi(P).pow(4u32);
        let scaled: Vec<f64> = sq.raw_values.iter().map(|v| Float::with_val(P, v / &pi4).to_f64()).collect();
        assert_eq!(scaled, vec![4.0, 25.0, 25.0]);
        let lap = generate_rectangle_laplacian(&one(), &one(), 50, P).unwrap();
        let bil = generate_rectangle_bilaplacian(&one(), &one(), 50, P).unwrap();
        for (l, b) in lap.raw_values.iter().zip(&bil.raw_values) {
            assert_eq!(Float::with_val(P, l.square_ref()), *b);
        }
    }

    #[test]
    fn closed_form_reproduces_stored_values() {
        let s =
            generate_rectangle_bilaplacian(&SideLength::parse("3/2").unwrap(), &SideLength::cube_root_of_two(), 80, P)
                .unwrap();
        for (v, p) in s.raw_values.iter().zip(&s.pairs) {
            assert_eq!(*v, s.closed_form(*p));
        }
    }

    #[test]
    fn perturbed_square_examples() {
        let mu = generate_perturbed_square_example(10, P).unwrap();
        let pi4 = mp::pi(P).pow(4u32);
        let expect = Float::with_val(P, &pi4 * 4u32) + 1u32;
        assert!(Float::with_val(P, mu.first_value() - &expect).abs() < 1e-70);
        assert!((mu.first_value().to_f64() - 390.636).abs() < 1e-3);
        let v = mu.values_slice();
        let gap = Float::with_val(P, &v[2] - &v[1]);
        let sixth = Float::with_val(P, 1) / 6u32;
        assert!(Float::with_val(P, gap - sixth).abs() < 1e-70);
    }

    #[test]
    fn oracle_agrees_with_enumeration() {
        let mu = generate_perturbed_square_example(3000, P).unwrap();
        let oracle = PerturbedSquare::new(P);
        for k in [1u64, 2, 3, 77, 1000, 2999, 3000] {
            assert_eq!(oracle.value(k).unwrap(), mu.value(k).unwrap(), "k={k}");
        }
        let window = oracle.values(1500, 40).unwrap();
        for (i, w) in window.iter().enumerate() {
            assert_eq!(*w, mu.value(1500 + i as u64).unwrap());
        }
        for k in [1u64, 2, 3, 4, 500, 2999] {
            let v = mu.value(k).unwrap();
            assert_eq!(oracle.count_le(&v).unwrap(), k);
            let below = Float::with_val(P, &v - Float::with_val(P, 1e-40));
            assert_eq!(oracle.count_le(&below).unwrap(), k - 1, "k={k}");
        }
        assert_eq!(oracle.count_le(&Float::with_val(P, 10)).unwrap(), 0);
        for g in [mu.value(1).unwrap(), mu.value(6).unwrap(), mu.value(1234).unwrap(), Float::with_val(P, 1e6)] {
            let (k, start, w) = oracle.window_around(&g, 5, 7).unwrap();
            let (k2, start2, w2) = mu.window_around(&g, 5, 7).unwrap();
            assert_eq!((k, start), (k2, start2));
            assert_eq!(w, w2);
        }
    }

    #[test]
    fn densify_examples() {
        let base =
            SpectralSequence::from_f64(&(1..=20).map(|k| (k * k) as f64).collect::<Vec<_>>(), P, "squares").unwrap();
        let d = densify_sequence(&base, &Float::with_val(P, 0.25)).unwrap();
        assert_eq!(d.block_sizes[15], 16);
        assert_eq!(d.block_sizes[0], 1);
        let total: u64 = (1..20u64).sum();
        assert_eq!(d.sequence.size() as u64, total);
        assert!(densify_sequence(&base, &Float::with_val(P, 0.5)).is_err());
        assert!(densify_sequence(&base, &Float::with_val(P, 0.01)).is_err());
    }

    #[test]
    fn counting_is_closed_on_the_right() {
        let s = SpectralSequence::from_f64(&[1.0, 2.0, 4.0], P, "t").unwrap();
        assert_eq!(counting_function(&s, &Float::with_val(P, 0.5)), 0);
        assert_eq!(counting_function(&s, &Float::with_val(P, 2.0)), 2);
        let lap = generate_rectangle_laplacian(&one(), &one(), 30, P).unwrap();
        let pi2 = mp::pi(P).square();
        let raw = lap.raw_values.clone();
        let count = raw.partition_point(|v| *v <= Float::with_val(P, &pi2 * 10u32));
        assert_eq!(count, 6);
    }

    #[test]
    fn side_length_parsing() {
        assert_eq!(SideLength::parse("2^(1/3)").unwrap(), SideLength::cube_root_of_two());
        assert_eq!(SideLength::cube_root_of_two().to_string(), "2^(1/3)");
        assert!(SideLength::parse("-1").is_err());
        assert!(SideLength::parse("2^(2/3)").is_err());
        let v = SideLength::cube_root_of_two().value(P);
        assert!(Float::with_val(P, v.pow(3u32) - 2u32).abs() < 1e-70);
    }

    #[test]
    fn rejects_unsorted_input() {
        assert!(matches!(
            SpectralSequence::from_f64(&[1.0, 1.0], 64, "t"),
            Err(SpectraError::NotIncreasing { index: 1 })
        ));
        assert!(SpectralSequence::from_f64(&[0.0, 1.0], 64, "t").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn perturbed_gaps_are_at_least_one_over_k_k_plus_one(count in 2usize..600) {
                let mu = generate_perturbed_square_example(count, 192).unwrap();
                let v = mu.values_slice();
                for k in 1..v.len() {
                    let gap = Float::with_val(192, &v[k] - &v[k - 1]);
                    // Equality holds inside a multiplicity block, so allow rounding.
                    let bound = Float::with_val(192, 1) / ((k * (k + 1)) as f64);
                    let slack = Float::with_val(192, v[k].abs_ref()) >> 176u32;
                    prop_assert!(gap + slack >= bound, "k={}", k);
                }
            }

            #[test]
            fn densified_output_increases(a in 0.2f64..0.45, n in 3usize..40) {
                let base = generate_perturbed_square_example(n, 192).unwrap();
                let d = densify_sequence(&base, &Float::with_val(192, a)).unwrap();
                let v = d.sequence.values_slice();
                prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
                prop_assert_eq!(d.block_sizes.iter().sum::<u64>() as usize, v.len());
            }

            #[test]
            fn counting_is_monotone_and_right_continuous(g1 in 0.0f64..30.0, g2 in 0.0f64..30.0) {
                let s = SpectralSequence::from_f64(&[1.0, 2.5, 7.0, 11.0, 20.0], 64, "t").unwrap();
                let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
                prop_assert!(counting_function(&s, &Float::with_val(64, lo)) <= counting_function(&s, &Float::with_val(64, hi)));
                for (k, v) in s.values_slice().iter().enumerate() {
                    prop_assert!(counting_function(&s, v) > k);
                }
            }
        }
    }
}
