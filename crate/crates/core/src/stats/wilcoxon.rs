use super::ranks::{average_ranks, tie_group_sizes};
use super::{Method, StatsError, TestResult};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest effective sample size that gets the exact null distribution by default.
pub const EXACT_WILCOXON_MAX_N: usize = 20;

/// Wilcoxon signed-rank test on `a - b` for each pair.
///
/// Zero differences are dropped and tied magnitudes share average ranks. The
/// statistic is W+, the rank sum of positive differences. The two-sided p is
/// `min(1, 2 * min(P(W+ <= w), P(W+ >= w)))`, taken from the exact sign-flip
/// distribution (conditional on the observed ranks) when n <= 20 and from the
/// tie-corrected normal approximation with 0.5 continuity correction above.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<TestResult, StatsError> {
    wilcoxon_signed_rank_with(pairs, None)
}

/// As [`wilcoxon_signed_rank`], with the method forced when `method` is set.
pub fn wilcoxon_signed_rank_with(pairs: &[(f64, f64)], method: Option<Method>) -> Result<TestResult, StatsError> {
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let method = method.unwrap_or(if n <= EXACT_WILCOXON_MAX_N { Method::Exact } else { Method::Approximate });
    let p_value = match method {
        Method::Exact => exact_p(&ranks, w_plus),
        Method::Approximate => normal_p(n, &magnitudes, w_plus),
    };
    Ok(TestResult { statistic: w_plus, p_value, n_effective: n, method })
}

/// Exact two-sided p over all 2^n sign assignments, by dynamic programming on
/// doubled ranks (average ranks are multiples of 1/2).
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; max_sum + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for s in (0..=reach).rev() {
            let carry = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * dist[s] + 0.5 * carry;
        }
    }
    let w = (w_plus * 2.0).round() as usize;
    let lower: f64 = dist[..=w].iter().sum();
    let upper: f64 = dist[w..].iter().sum();
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(n: usize, magnitudes: &[f64], w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_group_sizes(magnitudes)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}
