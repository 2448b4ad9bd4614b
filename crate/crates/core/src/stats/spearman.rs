use super::ranks::average_ranks;
use super::{Method, StatsError, TestResult};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Largest sample size whose p-value comes from full permutation enumeration.
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

/// Spearman's rho as the Pearson correlation of average ranks.
///
/// The two-sided p-value enumerates all n! permutations of the second
/// sample's ranks when `n <= 10`, and otherwise uses the t distribution with
/// n - 2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let rx = centered(&average_ranks(x));
    let ry = centered(&average_ranks(y));
    let sxx: f64 = rx.iter().map(|v| v * v).sum();
    let syy: f64 = ry.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);

    let (p_value, method) = if n <= EXACT_SPEARMAN_MAX_N {
        (permutation_p(&rx, &ry), Method::Exact)
    } else {
        (t_approximation_p(rho, n), Method::Approximate)
    };
    Ok(TestResult { statistic: rho, p_value, n_effective: n, method })
}

fn centered(r: &[f64]) -> Vec<f64> {
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|v| v - mean).collect()
}

fn t_approximation_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t)).min(1.0)
}

/// Share of permutations of `ry` whose |cross product| reaches the observed one.
///
/// Centered average ranks are multiples of 1/2, so the doubled values are
/// integers and the count is exact. Each Heap's-algorithm swap updates the
/// cross product in O(1).
fn permutation_p(rx: &[f64], ry: &[f64]) -> f64 {
    let twice = |v: &[f64]| v.iter().map(|r| (2.0 * r).round() as i64).collect::<Vec<i64>>();
    let rx = twice(rx);
    let mut perm = twice(ry);
    let n = perm.len();
    let mut sum: i64 = rx.iter().zip(&perm).map(|(a, b)| a * b).sum();
    let target = sum.abs();
    let mut hits: u64 = 1;
    let mut total: u64 = 1;
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            let a = if i % 2 == 0 { 0 } else { c[i] };
            sum += (rx[a] - rx[i]) * (perm[i] - perm[a]);
            perm.swap(a, i);
            total += 1;
            if sum.abs() >= target {
                hits += 1;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_reversal() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap().statistic - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap().statistic + 1.0).abs() < 1e-15);
    }

    #[test]
    fn adjacent_swaps() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r.statistic - 0.8).abs() < 1e-12);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn exact_p_for_perfect_order_of_five() {
        // Only the identity and the reversal reach |rho| = 1: 2 / 120.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((r.p_value - 2.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn large_sample_uses_t_approximation() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = (0..30).map(|i| f64::from((i * 7) % 30)).collect();
        let r = spearman(&x, &y).unwrap();
        assert_eq!(r.method, Method::Approximate);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn errors() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew { needed: 3, got: 2 }));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::Constant));
        assert_eq!(spearman(&[1.0, f64::NAN, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::NonFinite));
    }
}
