//! Exact counting of sums of two positive squares.
//!
//! The unit-square Dirichlet Laplacian has eigenvalues `π² s` where
//! `s = ℓ² + m²` with `ℓ, m ≥ 1`. Counting such sums exactly in `u64` lets the
//! perturbed-square sequence be evaluated at indices far beyond anything that
//! could be enumerated and stored: `count_le` walks the quarter circle once in
//! `O(√s)` steps without square roots.

/// `#{(ℓ, m) : ℓ, m ≥ 1, ℓ² + m² ≤ s}`.
pub fn count_le(s: u64) -> u64 {
    if s < 2 {
        return 0;
    }
    let mut m = isqrt(s - 1);
    let mut total = 0u64;
    let mut l = 1u64;
    loop {
        let l2 = l * l;
        if l2 >= s {
            break;
        }
        while m > 0 && l2 + m * m > s {
            m -= 1;
        }
        if m == 0 {
            break;
        }
        total += m;
        l += 1;
    }
    total
}

/// `(count_le(s − 1), count_le(s))` from a single walk.
pub fn count_le_pair(s: u64) -> (u64, u64) {
    if s < 2 {
        return (0, 0);
    }
    let mut m = isqrt(s - 1);
    let (mut total, mut on_circle) = (0u64, 0u64);
    let mut l = 1u64;
    loop {
        let l2 = l * l;
        if l2 >= s {
            break;
        }
        while m > 0 && l2 + m * m > s {
            m -= 1;
        }
        if m == 0 {
            break;
        }
        total += m;
        if l2 + m * m == s {
            on_circle += 1;
        }
        l += 1;
    }
    (total - on_circle, total)
}

/// Integer square root, exact for every `u64`.
pub fn isqrt(n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut r = (n as f64).sqrt() as u64;
    while r.checked_mul(r).is_none_or(|sq| sq > n) {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).is_some_and(|sq| sq <= n) {
        r += 1;
    }
    r
}

/// Number of ordered pairs with `ℓ² + m² = s`, `ℓ, m ≥ 1`.
pub fn representations(s: u64) -> u64 {
    let mut r = 0;
    let mut l = 1u64;
    while l * l < s {
        let rest = s - l * l;
        let m = isqrt(rest);
        if m * m == rest {
            r += 1;
        }
        l += 1;
    }
    r
}

/// All sums in `(lo, hi]`, sorted, each repeated by its multiplicity.
///
/// Both ends of the admissible `m` range only move down as `ℓ` grows, so a
/// narrow window far out costs one `O(√hi)` pointer walk.
pub fn sums_in(lo: u64, hi: u64) -> Vec<u64> {
    let mut out = Vec::new();
    if hi < 2 || hi <= lo {
        return out;
    }
    let mut m_hi = isqrt(hi - 1);
    // Smallest m with 1 + m² > lo.
    let mut m_lo = if lo >= 1 { isqrt(lo - 1) + 1 } else { 1 };
    let mut l = 1u64;
    while l * l < hi {
        let l2 = l * l;
        while m_hi > 0 && l2 + m_hi * m_hi > hi {
            m_hi -= 1;
        }
        while m_lo > 1 && l2 + (m_lo - 1) * (m_lo - 1) > lo {
            m_lo -= 1;
        }
        for m in m_lo..=m_hi {
            out.push(l2 + m * m);
        }
        l += 1;
    }
    out.sort_unstable();
    out
}

/// The `k`-th smallest sum (1-based, with multiplicity).
pub fn kth_sum(k: u64) -> u64 {
    assert!(k >= 1, "indices are 1-based");
    // C(s) ≈ πs/4 − √s; a few secant steps with that slope land within
    // the lattice fluctuation, then bisection finishes exactly.
    let slope = std::f64::consts::PI / 4.0;
    let mut s = ((k as f64) / slope + 2.0 * ((k as f64) / slope).sqrt()).max(2.0) as u64;
    for _ in 0..6 {
        let c = count_le(s) as f64;
        let next = (s as f64 + (k as f64 - c) / slope).max(2.0) as u64;
        if next == s {
            break;
        }
        s = next;
    }
    let (mut lo, mut hi) = (s, s);
    let mut step = ((s as f64).powf(0.34) as u64).max(4);
    while count_le(lo) >= k && lo > 1 {
        lo = lo.saturating_sub(step).max(1);
        step *= 2;
    }
    step = ((s as f64).powf(0.34) as u64).max(4);
    while count_le(hi) < k {
        hi += step;
        step *= 2;
    }
    // Invariant: count_le(lo) < k <= count_le(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_le(mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Sums `s_k, s_{k+1}, ..., s_{k+count-1}`.
pub fn sums_from(k: u64, count: usize) -> Vec<u64> {
    if count == 0 {
        return Vec::new();
    }
    let first = kth_sum(k);
    let before = count_le(first - 1);
    let skip = (k - 1 - before) as usize;
    let mut width = ((count + skip) as f64 * 4.0 / std::f64::consts::PI * 1.5) as u64 + 16;
    loop {
        let window = sums_in(first - 1, first - 1 + width);
        if window.len() >= skip + count {
            return window[skip..skip + count].to_vec();
        }
        width *= 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(limit: u64) -> Vec<u64> {
        let mut v = Vec::new();
        for l in 1..=limit {
            for m in 1..=limit {
                if l * l + m * m <= limit * limit {
                    v.push(l * l + m * m);
                }
            }
        }
        v.sort_unstable();
        v
    }

    #[test]
    fn counts_match_brute_force() {
        let all = brute(60);
        for s in [0u64, 1, 2, 4, 5, 8, 10, 13, 100, 325, 1000, 3599] {
            let expect = all.iter().filter(|&&x| x <= s).count() as u64;
            assert_eq!(count_le(s), expect, "s={s}");
        }
    }

    #[test]
    fn kth_matches_brute_force() {
        let all = brute(80);
        for k in 1..=2000u64 {
            assert_eq!(kth_sum(k), all[(k - 1) as usize], "k={k}");
        }
    }

    #[test]
    fn windows_match_brute_force() {
        let all = brute(80);
        assert_eq!(sums_from(1, 6), vec![2, 5, 5, 8, 10, 10]);
        for k in [1u64, 7, 100, 333, 1500] {
            let w = sums_from(k, 50);
            assert_eq!(w, all[(k - 1) as usize..(k - 1) as usize + 50].to_vec(), "k={k}");
        }
        for (lo, hi) in [(0u64, 2u64), (1, 5), (4, 5), (5, 10), (99, 400), (1000, 1001), (3000, 6400)] {
            let expect: Vec<u64> = all.iter().copied().filter(|&x| x > lo && x <= hi).collect();
            assert_eq!(sums_in(lo, hi), expect, "({lo}, {hi}]");
        }
    }

    #[test]
    fn paired_counts_agree() {
        for s in [0u64, 1, 2, 3, 5, 10, 25, 50, 325, 1000, 12345, 1 << 30] {
            assert_eq!(count_le_pair(s), (count_le(s.saturating_sub(1)), count_le(s)), "s={s}");
        }
    }

    #[test]
    fn multiplicity_six_at_325() {
        assert_eq!(representations(325), 6);
        assert_eq!(representations(50), 3);
        assert_eq!(representations(65), 4);
        assert_eq!(representations(3), 0);
    }

    #[test]
    fn isqrt_edges() {
        for n in [0u64, 1, 3, 4, 15, 16, 17, u64::MAX, (1u64 << 62) - 1] {
            let r = isqrt(n);
            assert!(r * r <= n);
            assert!((r + 1).checked_mul(r + 1).is_none_or(|sq| sq > n));
        }
    }

    #[test]
    fn large_index_is_consistent() {
        let k = 10_000_000_000u64;
        let s = kth_sum(k);
        assert!(count_le(s) >= k);
        assert!(count_le(s - 1) < k);
    }
}
