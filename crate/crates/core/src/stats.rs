//! Nonparametric tests: Wilcoxon signed-rank, Mann-Whitney U, the exact
//! binomial upper tail, and Bonferroni correction.
//!
//! Ranks are handled internally as doubled integers so tied average ranks
//! (which are half-integers) stay exact in the permutation distributions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("every paired difference is zero")]
    DegenerateSample,
    #[error("invalid binomial arguments: {0}")]
    InvalidBinomial(String),
    #[error("p-value {0} outside [0, 1]")]
    InvalidProbability(f64),
}

/// Largest number of non-zero differences tested with the exact distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;
/// Largest combined sample size tested with the exact distribution.
pub const MANN_WHITNEY_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Alternative: the first sample tends to be larger.
    OneSidedGreater,
    /// Alternative: the first sample tends to be smaller.
    OneSidedLess,
    TwoSided,
}

impl std::str::FromStr for Sidedness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greater" | "one_sided_greater" | "one-sided-greater" => Ok(Self::OneSidedGreater),
            "less" | "one_sided_less" | "one-sided-less" => Ok(Self::OneSidedLess),
            "two-sided" | "two_sided" => Ok(Self::TwoSided),
            other => Err(format!("unknown sidedness `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    WilcoxonSignedRank,
    MannWhitneyU,
    BinomialUpperTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub sidedness: Sidedness,
    pub exact: bool,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pairs: Vec<(f64, f64)>,
}

impl PairedSample {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self, StatsError> {
        if pairs.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }
}

/// Doubled average ranks (1-based) of `values`, in input order.
pub fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1 share the mean rank
        let doubled = (start + 1 + end + 1) as u64;
        for &i in &order[start..=end] {
            ranks[i] = doubled;
        }
        start = end + 1;
    }
    ranks
}

/// Σ (t³ − t) over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        sum += t * t * t - t;
        i = j + 1;
    }
    sum
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// p-value from an exact distribution over integer statistic values.
/// `counts[s]` is the number of equally likely outcomes with statistic `s`,
/// `center2` is twice the distribution's mean.
fn exact_p(counts: &[f64], observed: usize, center2: i64, sidedness: Sidedness) -> f64 {
    let total: f64 = counts.iter().sum();
    let tail: f64 = match sidedness {
        Sidedness::OneSidedGreater => counts[observed..].iter().sum(),
        Sidedness::OneSidedLess => counts[..=observed].iter().sum(),
        Sidedness::TwoSided => {
            let obs_dev = (2 * observed as i64 - center2).abs();
            counts
                .iter()
                .enumerate()
                .filter(|(s, _)| (2 * *s as i64 - center2).abs() >= obs_dev)
                .map(|(_, c)| c)
                .sum()
        }
    };
    (tail / total).clamp(0.0, 1.0)
}

fn normal_p(statistic: f64, mean: f64, variance: f64, sidedness: Sidedness) -> f64 {
    if variance <= 0.0 {
        return 1.0;
    }
    let sd = variance.sqrt();
    let n = standard_normal();
    let p = match sidedness {
        Sidedness::OneSidedGreater => n.sf((statistic - mean - 0.5) / sd),
        Sidedness::OneSidedLess => n.cdf((statistic - mean + 0.5) / sd),
        Sidedness::TwoSided => 2.0 * n.sf(((statistic - mean).abs() - 0.5) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// Wilcoxon signed-rank test on paired differences `a - b`.
///
/// Zero differences are dropped. The reported statistic is the smaller of
/// the two signed-rank sums; one-sided p-values refer to the positive-rank
/// sum. Exact for up to [`WILCOXON_EXACT_MAX`] non-zero differences,
/// otherwise normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(sample: &PairedSample, sidedness: Sidedness) -> Result<TestResult, StatsError> {
    let diffs: Vec<f64> = sample.pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(StatsError::DegenerateSample);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w_plus2: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2 = (n * (n + 1)) as u64;
    let w_minus2 = total2 - w_plus2;
    let statistic = w_plus2.min(w_minus2) as f64 / 2.0;

    let exact = n <= WILCOXON_EXACT_MAX;
    let p_value = if exact {
        // counts[s]: sign assignments whose doubled positive-rank sum is s
        let mut counts = vec![0.0f64; total2 as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                let c = counts[s];
                if c != 0.0 {
                    counts[s + r] += c;
                }
            }
            reach += r;
        }
        exact_p(&counts, w_plus2 as usize, total2 as i64, sidedness)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
        normal_p(w_plus2 as f64 / 2.0, mean, variance, sidedness)
    };
    Ok(TestResult { statistic, p_value, method: TestMethod::WilcoxonSignedRank, sidedness, exact, n_effective: n })
}

/// Mann-Whitney U test. The statistic is U of the first sample.
///
/// Exact for combined sizes up to [`MANN_WHITNEY_EXACT_MAX`], otherwise
/// tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64], sidedness: Sidedness) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (nx, ny) = (x.len(), y.len());
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let rx2: u64 = ranks[..nx].iter().sum();
    let offset2 = (nx * (nx + 1)) as u64;
    let u2 = rx2 - offset2;
    let statistic = u2 as f64 / 2.0;

    let exact = n <= MANN_WHITNEY_EXACT_MAX;
    let p_value = if exact {
        // table[k][s]: subsets of size k with doubled rank sum s
        let max_sum = (n * (n + 1)) as usize;
        let mut table = vec![vec![0.0f64; max_sum + 1]; nx + 1];
        table[0][0] = 1.0;
        for &r in &ranks {
            let r = r as usize;
            for k in (0..nx).rev() {
                for s in (0..=max_sum - r).rev() {
                    let c = table[k][s];
                    if c != 0.0 {
                        table[k + 1][s + r] += c;
                    }
                }
            }
        }
        let counts: Vec<f64> = table[nx][offset2 as usize..].to_vec();
        exact_p(&counts, u2 as usize, (2 * nx * ny) as i64, sidedness)
    } else {
        let (nxf, nyf, nf) = (nx as f64, ny as f64, n as f64);
        let mean = nxf * nyf / 2.0;
        let variance = nxf * nyf / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
        normal_p(statistic, mean, variance, sidedness)
    };
    Ok(TestResult { statistic, p_value, method: TestMethod::MannWhitneyU, sidedness, exact, n_effective: n })
}

/// Exact upper tail P(X ≥ k) for X ~ Binomial(n, p0), summed in log space.
pub fn binomial_test_ge(successes: u64, trials: u64, p0: f64) -> Result<TestResult, StatsError> {
    if successes > trials {
        return Err(StatsError::InvalidBinomial(format!("successes {successes} > trials {trials}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidBinomial(format!("p0 {p0} not in (0, 1)")));
    }
    let p_value = if successes == 0 {
        1.0
    } else {
        let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
        let logs: Vec<f64> = (successes..=trials)
            .map(|i| ln_binomial(trials, i) + i as f64 * lp + (trials - i) as f64 * lq)
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        (max + sum.ln()).exp().clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic: successes as f64,
        p_value,
        method: TestMethod::BinomialUpperTail,
        sidedness: Sidedness::OneSidedGreater,
        exact: true,
        n_effective: trials as usize,
    })
}

/// Multiplies each p-value by the number of tests, capped at one.
pub fn bonferroni(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidProbability(p));
    }
    let m = p_values.len() as f64;
    Ok(p_values.iter().map(|p| (p * m).min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubled_ranks_average_ties() {
        assert_eq!(doubled_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![4, 7, 7, 2]);
        assert_eq!(doubled_ranks(&[1.0, 1.0, 1.0]), vec![4, 4, 4]);
    }

    #[test]
    fn wilcoxon_all_zero_is_degenerate() {
        let s = PairedSample::new(vec![(3.0, 3.0), (4.0, 4.0)]).unwrap();
        assert_eq!(wilcoxon_signed_rank(&s, Sidedness::TwoSided), Err(StatsError::DegenerateSample));
    }

    #[test]
    fn wilcoxon_small_example() {
        // differences +1, +2, +3, -1: |d| ranks 1.5, 3, 4, 1.5
        let s = PairedSample::new(vec![(2.0, 1.0), (4.0, 2.0), (6.0, 3.0), (0.0, 1.0)]).unwrap();
        let r = wilcoxon_signed_rank(&s, Sidedness::TwoSided).unwrap();
        assert_eq!(r.statistic, 1.5);
        assert!(r.exact);
        assert_eq!(r.n_effective, 4);
        // W+ = 8.5; of the 16 sign patterns, six sit at least 3.5 from the mean of 5
        assert!((r.p_value - 6.0 / 16.0).abs() < 1e-12);
        let g = wilcoxon_signed_rank(&s, Sidedness::OneSidedGreater).unwrap();
        assert!((g.p_value - 3.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_rejects_bad_samples() {
        assert_eq!(PairedSample::new(vec![]), Err(StatsError::EmptySample));
        assert_eq!(PairedSample::new(vec![(f64::NAN, 1.0)]), Err(StatsError::NonFinite));
    }

    #[test]
    fn wilcoxon_large_uses_normal() {
        let pairs: Vec<_> = (0..40).map(|i| (i as f64 + 0.5 * ((i % 3) as f64), i as f64)).collect();
        let r = wilcoxon_signed_rank(&PairedSample::new(pairs).unwrap(), Sidedness::TwoSided).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn mann_whitney_separated() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Sidedness::OneSidedLess).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0 / 6.0).abs() < 1e-12);
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], Sidedness::TwoSided).unwrap();
        assert!((r.p_value - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_identical_samples() {
        let x = [1.0, 2.0, 2.0, 5.0];
        let r = mann_whitney_u(&x, &x, Sidedness::TwoSided).unwrap();
        assert_eq!(r.statistic, 8.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn mann_whitney_branch_flag() {
        let x: Vec<f64> = (0..15).map(f64::from).collect();
        let y: Vec<f64> = (10..25).map(f64::from).collect();
        let r = mann_whitney_u(&x, &y, Sidedness::TwoSided).unwrap();
        assert!(!r.exact);
        assert_eq!(r.n_effective, 30);
        assert!(mann_whitney_u(&[], &y, Sidedness::TwoSided).is_err());
    }

    #[test]
    fn mann_whitney_all_tied_large() {
        let x = vec![3.0; 15];
        let r = mann_whitney_u(&x, &x, Sidedness::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn binomial_edges() {
        assert_eq!(binomial_test_ge(0, 10, 0.3).unwrap().p_value, 1.0);
        let p = binomial_test_ge(12, 12, 0.5).unwrap().p_value;
        assert!((p - 0.5f64.powi(12)).abs() < 1e-15);
        assert!(binomial_test_ge(5, 4, 0.5).is_err());
        assert!(binomial_test_ge(1, 4, 1.0).is_err());
    }

    #[test]
    fn bonferroni_cases() {
        let out = bonferroni(&[0.01, 0.20]).unwrap();
        assert!((out[0] - 0.02).abs() < 1e-15 && (out[1] - 0.40).abs() < 1e-15);
        assert_eq!(bonferroni(&[0.6, 0.9]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(bonferroni(&[0.37]).unwrap(), vec![0.37]);
        assert_eq!(bonferroni(&[1.2]), Err(StatsError::InvalidProbability(1.2)));
    }
}
