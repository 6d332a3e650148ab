//! Dense symmetric linear algebra at extended precision.
//!
//! Gram matrices of exponentials reach condition numbers far beyond `f64`, so
//! the factorization runs on [`rug::Float`] entries. Pivoting always picks the
//! largest remaining diagonal entry, which keeps the unit lower factor bounded
//! by one in magnitude for positive definite input.

use crate::mp;
use rug::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error(
        "matrix is not numerically positive definite: pivot {step} (row {row}) is {value}; \
         retry with at least {recommended_digits} digits"
    )]
    NotPositiveDefinite { step: usize, row: usize, value: String, recommended_digits: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Dense symmetric matrix stored in full row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<Float>,
}

impl SymMatrix {
    /// Builds a matrix from `f(i, j)` evaluated on the lower triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Float) -> Self {
        let mut data: Vec<Float> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if j <= i {
                    data.push(f(i, j));
                } else {
                    data.push(Float::new(2));
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                data[i * n + j] = data[j * n + i].clone();
            }
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Float {
        &self.data[i * self.n + j]
    }

    pub fn prec(&self) -> u32 {
        self.data.first().map_or(mp::DEFAULT_PREC, Float::prec)
    }

    pub fn mul_vec(&self, x: &[Float]) -> Vec<Float> {
        let prec = self.prec();
        (0..self.n)
            .map(|i| {
                let mut s = Float::with_val(prec, 0);
                for (j, xj) in x.iter().enumerate() {
                    s += Float::with_val(prec, self.get(i, j) * xj);
                }
                s
            })
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[Float]) -> Float {
        mp::dot(x, &self.mul_vec(x))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// `P A Pᵀ = L D Lᵀ` with unit lower triangular `L`.
#[derive(Debug, Clone)]
pub struct Ldlt {
    n: usize,
    perm: Vec<usize>,
    lower: Vec<Float>,
    diag: Vec<Float>,
}

impl Ldlt {
    /// Factorizes `a` choosing the largest remaining diagonal as pivot.
    ///
    /// A non-positive pivot aborts with the elimination step, the original
    /// row it came from, and a doubled digit count to retry with.
    pub fn factor(a: &SymMatrix) -> Result<Self, LinalgError> {
        let n = a.dim();
        let prec = a.prec();
        let mut w: Vec<Float> = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            for i in (k + 1)..n {
                if w[i * n + i] > w[p * n + p] {
                    p = i;
                }
            }
            if p != k {
                swap_sym(&mut w, n, k, p);
                perm.swap(k, p);
            }
            let pivot = w[k * n + k].clone();
            if !(pivot.is_finite() && pivot > 0) {
                return Err(LinalgError::NotPositiveDefinite {
                    step: k,
                    row: perm[k],
                    value: mp::to_decimal(&pivot, 6),
                    recommended_digits: 2 * mp::digits_for_bits(prec).max(1),
                });
            }
            let multipliers: Vec<Float> = ((k + 1)..n).map(|i| Float::with_val(prec, &w[i * n + k] / &pivot)).collect();
            for i in (k + 1)..n {
                let lik = &multipliers[i - k - 1];
                for j in (k + 1)..=i {
                    let t = Float::with_val(prec, lik * &w[j * n + k]);
                    w[i * n + j] -= t;
                    if j < i {
                        w[j * n + i] = w[i * n + j].clone();
                    }
                }
            }
            for (i, lik) in ((k + 1)..n).zip(multipliers) {
                w[k * n + i] = lik.clone();
                w[i * n + k] = lik;
            }
        }
        let mut lower = vec![Float::with_val(prec, 0); n * n];
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            for j in 0..i {
                lower[i * n + j] = w[i * n + j].clone();
            }
            lower[i * n + i] = Float::with_val(prec, 1);
            diag.push(w[i * n + i].clone());
        }
        Ok(Ldlt { n, perm, lower, diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Pivots in elimination order.
    pub fn pivots(&self) -> &[Float] {
        &self.diag
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn solve(&self, b: &[Float]) -> Result<Vec<Float>, LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Dimension { expected: n, got: b.len() });
        }
        let prec = self.diag.first().map_or(mp::DEFAULT_PREC, Float::prec);
        let mut y: Vec<Float> = self.perm.iter().map(|&p| Float::with_val(prec, &b[p])).collect();
        for i in 0..n {
            for j in 0..i {
                let t = Float::with_val(prec, &self.lower[i * n + j] * &y[j]);
                y[i] -= t;
            }
        }
        for (yi, d) in y.iter_mut().zip(&self.diag) {
            *yi /= d;
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let t = Float::with_val(prec, &self.lower[j * n + i] * &y[j]);
                y[i] -= t;
            }
        }
        let mut x = vec![Float::with_val(prec, 0); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i].clone();
        }
        Ok(x)
    }
}

fn swap_sym(w: &mut [Float], n: usize, a: usize, b: usize) {
    for j in 0..n {
        w.swap(a * n + j, b * n + j);
    }
    for i in 0..n {
        w.swap(i * n + a, i * n + b);
    }
}

/// Two-sided 2-norm condition estimate from power and inverse iteration.
#[derive(Debug, Clone)]
pub struct ConditionEstimate {
    pub lambda_max: Float,
    pub lambda_min: Float,
    pub condition: Float,
}

/// Estimates `λ_max / λ_min` of a positive definite matrix.
///
/// Both iterations start from the all-ones vector and stop once the
/// Rayleigh quotient settles to 1e-3 relative or after `max_iters` steps.
pub fn condition_estimate(a: &SymMatrix, fact: &Ldlt, max_iters: usize) -> Result<ConditionEstimate, LinalgError> {
    let prec = a.prec();
    let lambda_max = power_iteration(a.dim(), prec, max_iters, |v| Ok(a.mul_vec(v)))?;
    let inv_max = power_iteration(a.dim(), prec, max_iters, |v| fact.solve(v))?;
    let lambda_min = Float::with_val(prec, 1) / &inv_max;
    let condition = Float::with_val(prec, &lambda_max / &lambda_min);
    Ok(ConditionEstimate { lambda_max, lambda_min, condition })
}

fn power_iteration(
    n: usize,
    prec: u32,
    max_iters: usize,
    mut apply: impl FnMut(&[Float]) -> Result<Vec<Float>, LinalgError>,
) -> Result<Float, LinalgError> {
    let scale = Float::with_val(prec, n as f64).sqrt().recip();
    let mut v: Vec<Float> = (0..n).map(|_| scale.clone()).collect();
    let mut estimate = Float::with_val(prec, 0);
    for _ in 0..max_iters.max(1) {
        let w = apply(&v)?;
        let rq = mp::dot(&v, &w);
        let norm = mp::norm2(&w);
        if norm.is_zero() {
            return Ok(Float::with_val(prec, 0));
        }
        v = w.into_iter().map(|x| x / &norm).collect();
        let settled = !estimate.is_zero() && {
            let rel = Float::with_val(64, &rq - &estimate).abs() / Float::with_val(64, &rq).abs();
            rel < 1e-3
        };
        estimate = rq;
        if settled {
            break;
        }
    }
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hilbert(n: usize, prec: u32) -> SymMatrix {
        SymMatrix::from_fn(n, |i, j| Float::with_val(prec, 1) / ((i + j + 1) as f64))
    }

    /// Exact Hilbert inverse: (-1)^{i+j}(i+j+1) C(n+i,n-j-1) C(n+j,n-i-1) C(i+j,i)².
    fn hilbert_inverse_entry(n: usize, i: usize, j: usize) -> f64 {
        fn binom(a: usize, b: usize) -> f64 {
            (0..b).fold(1.0, |acc, k| acc * (a - k) as f64 / (k + 1) as f64)
        }
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * (i + j + 1) as f64 * binom(n + i, n - j - 1) * binom(n + j, n - i - 1) * binom(i + j, i).powi(2)
    }

    #[test]
    fn hilbert_solve_matches_exact_inverse() {
        let n = 10;
        let a = hilbert(n, 256);
        let f = Ldlt::factor(&a).unwrap();
        for col in [0usize, 4, 9] {
            let mut e = vec![Float::with_val(256, 0); n];
            e[col] = Float::with_val(256, 1);
            let x = f.solve(&e).unwrap();
            for (i, xi) in x.iter().enumerate() {
                let exact = hilbert_inverse_entry(n, i, col);
                assert!((xi.to_f64() - exact).abs() <= 1e-12 * exact.abs(), "({i},{col})");
            }
        }
    }

    #[test]
    fn hilbert_condition_estimate_order() {
        // cond_2(H_8) = 1.5258e10.
        let a = hilbert(8, 200);
        let f = Ldlt::factor(&a).unwrap();
        let c = condition_estimate(&a, &f, 200).unwrap();
        let c = c.condition.to_f64();
        assert!((c / 1.5258e10 - 1.0).abs() < 1e-3, "{c}");
    }

    #[test]
    fn indefinite_reports_pivot_and_recommendation() {
        let a = SymMatrix::from_fn(2, |i, j| {
            let v = [[1.0, 2.0], [2.0, 1.0]];
            Float::with_val(128, v[i][j])
        });
        match Ldlt::factor(&a) {
            Err(LinalgError::NotPositiveDefinite { step, recommended_digits, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(recommended_digits, 2 * mp::digits_for_bits(128));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pivots_positive_and_ordered_start() {
        let a = hilbert(6, 128);
        let f = Ldlt::factor(&a).unwrap();
        assert!(f.pivots().iter().all(|p| *p > 0));
        assert_eq!(f.permutation()[0], 0);
    }

    proptest! {
        #[test]
        fn solve_inverts_random_spd(seed in proptest::collection::vec(-1.0f64..1.0, 16)) {
            // A = MᵀM + I is positive definite.
            let n = 4;
            let a = SymMatrix::from_fn(n, |i, j| {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n { s += seed[k * n + i] * seed[k * n + j]; }
                Float::with_val(192, s)
            });
            let f = Ldlt::factor(&a).unwrap();
            let b: Vec<Float> = (0..n).map(|i| Float::with_val(192, i as f64 + 0.5)).collect();
            let x = f.solve(&b).unwrap();
            let r = a.mul_vec(&x);
            for (ri, bi) in r.iter().zip(&b) {
                prop_assert!((ri.to_f64() - bi.to_f64()).abs() < 1e-40);
            }
        }
    }
}
