//! Small statistics used by the evaluation code.

use alloc::vec;
use alloc::vec::Vec;

/// Average ranks (1-based), ties share the mean rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

fn choose2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0usize; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = (0..ka).map(|i| choose2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = choose2(a.len());
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Total variation distance `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_monotone() {
        let x = [0.0, 0.1, 0.2, 0.3];
        assert!((spearman(&x, &[5.0, 3.0, 2.0, -1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 4]), 0.0);
    }

    /// Pair-counting definition, O(n^2).
    fn ari_bruteforce(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        (both - expected) / (0.5 * (only_a + only_b) - expected)
    }

    #[test]
    fn ari_matches_pair_counting() {
        let a = [0, 0, 1, 1, 2, 2, 2, 0, 1];
        let b = [1, 1, 0, 0, 0, 2, 2, 1, 2];
        assert!((adjusted_rand_index(&a, &b) - ari_bruteforce(&a, &b)).abs() < 1e-12);
        assert!((adjusted_rand_index(&a, &[5, 5, 3, 3, 4, 4, 4, 5, 3]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tv_distance() {
        assert!((total_variation(&[0.5, 0.5], &[1.0, 0.0]) - 0.5).abs() < 1e-15);
    }
}
