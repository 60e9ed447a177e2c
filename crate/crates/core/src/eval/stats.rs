//! Signed-rank tests on paired differences and Holm adjustment.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::num::{average_ranks, median, normal_cdf, normal_two_sided_p};

/// Largest number of nonzero differences handled by the exact null
/// distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

impl Alternative {
    /// One-sided alternative in the direction of the observed median.
    pub fn from_sign(median_difference: f64) -> Self {
        if median_difference < 0.0 {
            Alternative::Less
        } else {
            Alternative::Greater
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PMethod {
    Exact,
    Normal,
    /// Every difference was zero.
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of the ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub method: PMethod,
}

fn nonzero_ranks(differences: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nz: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    (nz, average_ranks(&abs))
}

fn w_plus(nz: &[f64], ranks: &[f64]) -> f64 {
    nz.iter().zip(ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum()
}

fn degenerate() -> TestResult {
    TestResult { statistic: 0.0, p_value: 1.0, n: 0, method: PMethod::Degenerate }
}

/// Wilcoxon signed-rank test. Zero differences are dropped; ties share
/// average ranks. Exact for up to [`EXACT_MAX_N`] nonzero differences, normal
/// approximation with continuity and tie corrections above.
pub fn wilcoxon_paired(differences: &[f64], alternative: Alternative) -> TestResult {
    let n = differences.iter().filter(|d| **d != 0.0).count();
    if n <= EXACT_MAX_N {
        wilcoxon_exact(differences, alternative)
    } else {
        wilcoxon_normal(differences, alternative)
    }
}

/// Exact conditional null distribution of W+ given the rank pattern.
pub fn wilcoxon_exact(differences: &[f64], alternative: Alternative) -> TestResult {
    let (nz, ranks) = nonzero_ranks(differences);
    if nz.is_empty() {
        return degenerate();
    }
    // average ranks are multiples of one half
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let w = w_plus(&nz, &ranks);
    let w2 = libm::round(2.0 * w) as usize;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
    let p_value = match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    };
    TestResult { statistic: w, p_value, n: nz.len(), method: PMethod::Exact }
}

pub fn wilcoxon_normal(differences: &[f64], alternative: Alternative) -> TestResult {
    let (nz, ranks) = nonzero_ranks(differences);
    if nz.is_empty() {
        return degenerate();
    }
    let n = nz.len() as f64;
    let w = w_plus(&nz, &ranks);
    let mean = n * (n + 1.0) / 4.0;
    let sd = libm::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term(&ranks) / 48.0);
    let p_value = if sd == 0.0 {
        1.0
    } else {
        match alternative {
            Alternative::Greater => 1.0 - normal_cdf((w - mean - 0.5) / sd),
            Alternative::Less => normal_cdf((w - mean + 0.5) / sd),
            Alternative::TwoSided => normal_two_sided_p(((w - mean).abs() - 0.5).max(0.0) / sd),
        }
    };
    TestResult { statistic: w, p_value, n: nz.len(), method: PMethod::Normal }
}

/// Sum of `t^3 - t` over groups of tied ranks.
fn tie_term(ranks: &[f64]) -> f64 {
    let mut groups: BTreeMap<u64, f64> = BTreeMap::new();
    for r in ranks {
        *groups.entry(r.to_bits()).or_default() += 1.0;
    }
    groups.values().map(|t| t * t * t - t).sum()
}

/// Large-sample z of the signed-rank statistic with tie-corrected variance
/// and no continuity correction.
pub fn signed_rank_z(differences: &[f64]) -> f64 {
    let (nz, ranks) = nonzero_ranks(differences);
    let n = nz.len() as f64;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term(&ranks) / 48.0;
    if var <= 0.0 {
        return 0.0;
    }
    (w_plus(&nz, &ranks) - n * (n + 1.0) / 4.0) / libm::sqrt(var)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredResult {
    /// Sum of the per-cluster signed-rank sums.
    pub statistic: f64,
    pub z: f64,
    pub p_value: f64,
    pub n_clusters: usize,
}

/// Cluster-aware signed-rank test.
///
/// Nonzero differences are ranked jointly by absolute value, each tied
/// group taking the upper rank (the count of absolute differences at or
/// below it), so that replicating every observation the same number of
/// times scales all ranks by that factor. Signed ranks are summed within
/// clusters; the statistic is standardized by the square root of the sum of
/// squared cluster totals and referred to the normal distribution.
pub fn clustered_signed_rank<C: Ord + Clone>(
    differences: &[f64],
    clusters: &[C],
) -> Result<ClusteredResult, EvalError> {
    assert_eq!(differences.len(), clusters.len());
    let mut abs: Vec<(f64, usize)> = differences
        .iter()
        .enumerate()
        .filter(|(_, d)| **d != 0.0)
        .map(|(i, d)| (d.abs(), i))
        .collect();
    abs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank = vec![0i64; differences.len()];
    let mut i = 0;
    while i < abs.len() {
        let mut j = i;
        while j + 1 < abs.len() && abs[j + 1].0 == abs[i].0 {
            j += 1;
        }
        for &(_, k) in &abs[i..=j] {
            rank[k] = (j + 1) as i64;
        }
        i = j + 1;
    }
    let mut sums: BTreeMap<&C, (i64, bool)> = BTreeMap::new();
    for (k, c) in clusters.iter().enumerate() {
        let e = sums.entry(c).or_insert((0, false));
        if differences[k] != 0.0 {
            e.0 += if differences[k] > 0.0 { rank[k] } else { -rank[k] };
            e.1 = true;
        }
    }
    let n_clusters = sums.values().filter(|(_, nz)| *nz).count();
    if n_clusters < 2 {
        return Err(EvalError::InsufficientClusters { found: n_clusters });
    }
    // dividing by the common factor keeps the standardized value identical
    // for replicated data
    let g = sums.values().fold(0u64, |g, (t, _)| gcd(g, t.unsigned_abs())).max(1) as i128;
    let t: i128 = sums.values().map(|(t, _)| *t as i128 / g).sum();
    let s: i128 = sums.values().map(|(t, _)| (*t as i128 / g).pow(2)).sum();
    let z = if s == 0 { 0.0 } else { t as f64 / libm::sqrt(s as f64) };
    let statistic: f64 = sums.values().map(|(t, _)| *t as f64).sum();
    Ok(ClusteredResult { statistic, z, p_value: normal_two_sided_p(z.abs()), n_clusters })
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedResult<C> {
    /// Median difference per cluster, in cluster order.
    pub medians: Vec<(C, f64)>,
    pub test: TestResult,
}

/// Collapse each cluster to its median difference and run a two-sided
/// signed-rank test on the medians.
pub fn median_aggregate_test<C: Ord + Clone>(
    differences: &[f64],
    clusters: &[C],
) -> Result<AggregatedResult<C>, EvalError> {
    assert_eq!(differences.len(), clusters.len());
    let mut groups: BTreeMap<&C, Vec<f64>> = BTreeMap::new();
    for (d, c) in differences.iter().zip(clusters) {
        groups.entry(c).or_default().push(*d);
    }
    if groups.len() < 2 {
        return Err(EvalError::InsufficientClusters { found: groups.len() });
    }
    let medians: Vec<(C, f64)> =
        groups.into_iter().map(|(c, v)| (c.clone(), median(&v).unwrap_or(0.0))).collect();
    let values: Vec<f64> = medians.iter().map(|(_, m)| *m).collect();
    let test = wilcoxon_paired(&values, Alternative::TwoSided);
    Ok(AggregatedResult { medians, test })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * p_values[i]).min(1.0));
        out[i] = running;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_cases() {
        let r = wilcoxon_paired(&[1.0, 2.0, 3.0, 4.0, 5.0], Alternative::TwoSided);
        assert_eq!(r.method, PMethod::Exact);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        assert_eq!(r.statistic, 15.0);
        let r = wilcoxon_paired(&[0.1, 0.2], Alternative::TwoSided);
        assert!((r.p_value - 0.5).abs() < 1e-15);
        let r = wilcoxon_paired(&[1.0, 2.0, 3.0, 4.0, 5.0], Alternative::Greater);
        assert!((r.p_value - 1.0 / 32.0).abs() < 1e-15);
        let r = wilcoxon_paired(&[1.0, 2.0, 3.0, 4.0, 5.0], Alternative::Less);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn all_zero_is_no_evidence() {
        let r = wilcoxon_paired(&[0.0, 0.0, 0.0], Alternative::TwoSided);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, PMethod::Degenerate);
    }

    #[test]
    fn holm_examples() {
        let adj = holm_adjust(&[0.01, 0.02, 0.04]);
        for (a, b) in adj.iter().zip([0.03, 0.04, 0.04]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(holm_adjust(&[0.5]), vec![0.5]);
        assert_eq!(holm_adjust(&[0.04, 0.01]), vec![0.04, 0.02]);
    }

    #[test]
    fn clustered_symmetry_and_errors() {
        let r = clustered_signed_rank(&[1.0, -1.0], &[0, 1]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(matches!(
            clustered_signed_rank(&[1.0, 2.0], &[0, 0]),
            Err(EvalError::InsufficientClusters { found: 1 })
        ));
    }

    #[test]
    fn aggregated_two_games() {
        let r = median_aggregate_test(&[0.1, 0.1, 0.2], &["a", "a", "b"]).unwrap();
        assert_eq!(r.medians, vec![("a", 0.1), ("b", 0.2)]);
        assert!((r.test.p_value - 0.5).abs() < 1e-15);
        let r = median_aggregate_test(&[0.0, 0.0], &["a", "b"]).unwrap();
        assert_eq!(r.test.p_value, 1.0);
    }
}
