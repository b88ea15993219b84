//! Rank correlation between predicted and reference orderings.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCorrelation {
    /// Kendall τ-b. NaN when either input is constant.
    pub kendall_tau: f64,
    /// Spearman ρ on average ranks. NaN when either input is constant.
    pub spearman_rho: f64,
}

/// Number of pairs inside runs of equal neighbours.
fn tied_pairs<T>(v: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let (mut total, mut run) = (0u64, 1u64);
    for i in 1..=v.len() {
        if i < v.len() && eq(&v[i - 1], &v[i]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Stable merge sort by `y` returning the number of inversions.
fn sort_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count(&mut v[..mid], buf) + sort_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall τ-b in `O(n log n)`.
pub fn kendall_tau_b(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as u64;
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let n1 = tied_pairs(&pairs, |a, b| a.0.total_cmp(&b.0).is_eq());
    let n3 = tied_pairs(&pairs, |a, b| a.0.total_cmp(&b.0).is_eq() && a.1.total_cmp(&b.1).is_eq());
    let mut y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(y.len());
    let swaps = sort_count(&mut y, &mut buf);
    let n2 = tied_pairs(&y, |a, b| a.total_cmp(b).is_eq());
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    tau_from_counts(s, n0, n1, n2)
}

/// `s / sqrt((n0 - n1)(n0 - n2))`.
pub fn tau_from_counts(s: i128, n0: u64, n1: u64, n2: u64) -> f64 {
    let den = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if den == 0.0 {
        return f64::NAN;
    }
    s as f64 / libm::sqrt(den)
}

/// Average ranks, doubled so ties stay integral: a run covering sorted
/// positions `i..=j` gets `i + j + 2`.
pub fn doubled_ranks(v: &[f64]) -> Vec<i64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = alloc::vec![0i64; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]].total_cmp(&v[idx[i]]).is_eq() {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j + 2) as i64;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of integer sequences, with exact integer moments.
pub fn pearson_int(a: &[i64], b: &[i64]) -> f64 {
    let n = a.len() as i128;
    let (sa, sb) = (a.iter().map(|&x| x as i128).sum::<i128>(), b.iter().map(|&x| x as i128).sum::<i128>());
    let sab: i128 = a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum();
    let saa: i128 = a.iter().map(|&x| x as i128 * x as i128).sum();
    let sbb: i128 = b.iter().map(|&x| x as i128 * x as i128).sum();
    let cov = n * sab - sa * sb;
    let (va, vb) = (n * saa - sa * sa, n * sbb - sb * sb);
    if va == 0 || vb == 0 {
        return f64::NAN;
    }
    cov as f64 / libm::sqrt(va as f64 * vb as f64)
}

pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    pearson_int(&doubled_ranks(xs), &doubled_ranks(ys))
}

pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<RankCorrelation, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooFewObservations(xs.len()));
    }
    Ok(RankCorrelation { kendall_tau: kendall_tau_b(xs, ys), spearman_rho: spearman_rho(xs, ys) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_values() {
        let r = rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r.kendall_tau - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.spearman_rho - 0.8).abs() < 1e-12);
        let r = rank_correlation(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]).unwrap();
        assert_eq!((r.kendall_tau, r.spearman_rho), (-1.0, -1.0));
    }

    #[test]
    fn ties() {
        assert_eq!(doubled_ranks(&[5.0, 1.0, 5.0, 3.0]), [7, 2, 7, 4]);
        // Hand count: concordant 4, discordant 0, one tie in x, one in y.
        let t = kendall_tau_b(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]);
        assert!((t - 4.0 / 5.0).abs() < 1e-12);
        assert!(kendall_tau_b(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    #[test]
    fn errors() {
        assert_eq!(rank_correlation(&[1.0], &[1.0]), Err(EvalError::TooFewObservations(1)));
        assert_eq!(rank_correlation(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1)));
    }
}
