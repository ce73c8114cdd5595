//! Rank-based two-sample and paired tests, and Pearson correlation.
//!
//! Small samples get exact null distributions, computed by dynamic programming over
//! doubled midranks so that ties stay integral. Larger samples use the normal
//! approximation with tie and continuity corrections.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestConfig {
    /// Exact Mann-Whitney distribution when `|a| + |b|` is at most this.
    pub exact_mwu_max: usize,
    /// Exact signed-rank distribution when the number of nonzero differences is at most this.
    pub exact_wilcoxon_max: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            exact_mwu_max: 20,
            exact_wilcoxon_max: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub n: usize,
}

/// 1-based ranks with ties given the average of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sum over tie groups of `t^3 - t`.
fn tie_term(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        sum += t * t * t - t;
        i = j + 1;
    }
    sum
}

fn two_sided_normal(z: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z.max(0.0)))).min(1.0)
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// Mann-Whitney U of `a` against `b` (the number of pairs with a > b, ties counting half).
pub fn mann_whitney_u(a: &[f64], b: &[f64], config: &TestConfig) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput(
            "Mann-Whitney U needs two non-empty samples".into(),
        ));
    }
    check_finite(a, "Mann-Whitney sample")?;
    check_finite(b, "Mann-Whitney sample")?;
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;

    if n <= config.exact_mwu_max {
        // doubled ranks are integers; the rank sum of `a` is a subset sum of size na
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut ways = vec![vec![0f64; total + 1]; na + 1];
        ways[0][0] = 1.0;
        for &d in &doubled {
            for k in (1..=na).rev() {
                for s in (d..=total).rev() {
                    ways[k][s] += ways[k - 1][s - d];
                }
            }
        }
        let mean2 = (na * (n + 1)) as i64;
        let obs = ((2.0 * ra).round() as i64 - mean2).abs();
        let all: f64 = ways[na].iter().sum();
        let extreme: f64 = ways[na]
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as i64 - mean2).abs() >= obs)
            .map(|(_, w)| w)
            .sum();
        return Ok(TestResult {
            statistic: u,
            p_value: (extreme / all).min(1.0),
            exact: true,
            n,
        });
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let mu = naf * nbf / 2.0;
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        two_sided_normal(((u - mu).abs() - 0.5) / var.sqrt())
    };
    Ok(TestResult {
        statistic: u,
        p_value,
        exact: false,
        n,
    })
}

/// Wilcoxon signed-rank test on paired samples `(x, y)`; W is the rank sum of positive `x - y`.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)], config: &TestConfig) -> Result<TestResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| x - y).collect();
    check_finite(&diffs, "Wilcoxon difference")?;
    let nonzero: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::InvalidInput(
            "all paired differences are zero".into(),
        ));
    }
    let n = nonzero.len();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .fold(0.0, |a, (_, r)| a + r);

    if n <= config.exact_wilcoxon_max {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut ways = vec![0f64; total + 1];
        ways[0] = 1.0;
        for &d in &doubled {
            for s in (d..=total).rev() {
                ways[s] += ways[s - d];
            }
        }
        let mean2 = (total / 2) as i64;
        let obs = ((2.0 * w).round() as i64 - mean2).abs();
        let all: f64 = ways.iter().sum();
        let extreme: f64 = ways
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as i64 - mean2).abs() >= obs)
            .map(|(_, c)| c)
            .sum();
        return Ok(TestResult {
            statistic: w,
            p_value: (extreme / all).min(1.0),
            exact: true,
            n,
        });
    }

    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
    let p_value = if var <= 0.0 {
        1.0
    } else {
        two_sided_normal(((w - mu).abs() - 0.5) / var.sqrt())
    };
    Ok(TestResult {
        statistic: w,
        p_value,
        exact: false,
        n,
    })
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> TestConfig {
        TestConfig::default()
    }

    /// Brute force: enumerate all ways to pick |a| of the pooled values.
    fn mwu_enumerated(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| {
            let mut u = 0.0;
            for i in (0..n).filter(|i| mask >> i & 1 == 1) {
                for j in (0..n).filter(|j| mask >> j & 1 == 0) {
                    u += if pooled[i] > pooled[j] {
                        1.0
                    } else if pooled[i] == pooled[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            u
        };
        let mu = (a.len() * b.len()) as f64 / 2.0;
        let obs = (u_of((1u32 << a.len()) - 1) - mu).abs();
        let masks: Vec<u32> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == a.len())
            .collect();
        let extreme = masks
            .iter()
            .filter(|&&m| (u_of(m) - mu).abs() >= obs - 1e-9)
            .count();
        extreme as f64 / masks.len() as f64
    }

    #[test]
    fn mwu_separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &cfg()).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.1).abs() < 1e-12);
        assert!(r.exact);
    }

    #[test]
    fn mwu_identical_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &cfg()).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn mwu_matches_enumeration_with_ties() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 2.0, 5.0], &[2.0, 3.0, 7.0]),
            (&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0, 1.0]),
            (&[3.0], &[1.0, 2.0, 4.0, 5.0, 6.0]),
            (&[1.5, 2.5, 2.5, 9.0, 9.0], &[2.5, 9.0, 0.0, 1.0, 4.0]),
        ];
        for (a, b) in cases {
            let r = mann_whitney_u(a, b, &cfg()).unwrap();
            assert!(
                (r.p_value - mwu_enumerated(a, b)).abs() < 1e-12,
                "{a:?} {b:?}"
            );
        }
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(mann_whitney_u(&[], &[1.0], &cfg()).is_err());
    }

    #[test]
    fn wilcoxon_all_positive() {
        let pairs: Vec<(f64, f64)> = (1..=5).map(|d| (d as f64, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs, &cfg()).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert!((r.p_value - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_antisymmetric_and_degenerate() {
        let r = wilcoxon_signed_rank(&[(1.0, 0.0), (0.0, 1.0)], &cfg()).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(wilcoxon_signed_rank(&[(1.0, 1.0)], &cfg()).is_err());
    }

    #[test]
    fn wilcoxon_matches_sign_enumeration() {
        let diffs = [1.0, -2.0, 2.0, 3.0, -3.0, 3.0, 5.0, 0.0];
        let pairs: Vec<(f64, f64)> = diffs.iter().map(|&d| (d, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs, &cfg()).unwrap();
        let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
        let ranks = midranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let mean = ranks.iter().sum::<f64>() / 2.0;
        let obs = (r.statistic - mean).abs();
        let n = nz.len();
        let extreme = (0u32..1 << n)
            .filter(|m| {
                let w: f64 = (0..n).filter(|i| m >> i & 1 == 1).map(|i| ranks[i]).sum();
                (w - mean).abs() >= obs - 1e-9
            })
            .count();
        assert!((r.p_value - extreme as f64 / (1u32 << n) as f64).abs() < 1e-12);
    }

    #[test]
    fn normal_branch_is_used_for_large_samples() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (100..130).map(f64::from).collect();
        let r = mann_whitney_u(&a, &b, &cfg()).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    proptest! {
        #[test]
        fn u_statistics_are_complementary(
            a in prop::collection::vec(0i32..10, 1..15),
            b in prop::collection::vec(0i32..10, 1..15),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = mann_whitney_u(&a, &b, &cfg()).unwrap();
            let ba = mann_whitney_u(&b, &a, &cfg()).unwrap();
            prop_assert!((ab.statistic + ba.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        }

        #[test]
        fn tests_are_rank_invariant(
            a in prop::collection::vec(-5.0f64..5.0, 1..12),
            b in prop::collection::vec(-5.0f64..5.0, 1..12),
        ) {
            let f = |x: f64| x.exp() * 3.0 + 1.0;
            let fa: Vec<f64> = a.iter().map(|&x| f(x)).collect();
            let fb: Vec<f64> = b.iter().map(|&x| f(x)).collect();
            let r1 = mann_whitney_u(&a, &b, &cfg()).unwrap();
            let r2 = mann_whitney_u(&fa, &fb, &cfg()).unwrap();
            prop_assert_eq!(r1.statistic, r2.statistic);
            prop_assert_eq!(r1.p_value, r2.p_value);
            let pairs: Vec<(f64, f64)> = a.iter().map(|&x| (x, 0.0)).collect();
            let tpairs: Vec<(f64, f64)> = a.iter().map(|&x| (if x == 0.0 { 0.0 } else { x.signum() * f(x.abs()) }, 0.0)).collect();
            if let (Ok(w1), Ok(w2)) = (wilcoxon_signed_rank(&pairs, &cfg()), wilcoxon_signed_rank(&tpairs, &cfg())) {
                prop_assert_eq!(w1.statistic, w2.statistic);
                prop_assert_eq!(w1.p_value, w2.p_value);
            }
        }
    }
}
