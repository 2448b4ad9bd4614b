//! Proportional-odds (cumulative logit) model with a single binary covariate:
//!
//! `P(y <= k | x) = logistic(theta_k - beta * x)`, `x` in {0, 1}.
//!
//! Because the covariate is binary the likelihood depends on the data only
//! through a 2 x K table of counts, so each Newton iteration is O(K).
//! The optimizer works on the unconstrained vector
//! `eta = [theta_1, delta_1, .., delta_{K-2}, beta]` with
//! `theta_{k+1} = theta_k + exp(delta_k)`, which keeps thresholds ordered.

use super::StatsError;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeSet;

pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderedLogitFit {
    pub beta: f64,
    /// Cut points between consecutive observed categories, strictly increasing.
    pub thresholds: Vec<f64>,
    pub std_err_beta: f64,
    pub z: f64,
    /// Two-sided Wald p-value for beta = 0.
    pub p_value: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observed outcome labels, in order; the model's categories.
    pub categories: Vec<u32>,
    pub n_obs: usize,
    /// Log-likelihood after the start point and after every accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Count table and likelihood derivatives for one data set.
#[derive(Debug, Clone)]
pub struct OrderedLogitProblem {
    /// `counts[x][k]` for collapsed category index k.
    counts: [Vec<f64>; 2],
    categories: Vec<u32>,
    n_obs: usize,
    warnings: Vec<String>,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn density(z: f64) -> f64 {
    logistic(z) * logistic(-z)
}

/// F(a) - F(b) for b < a, computed on the side where it does not cancel.
fn interval_prob(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        logistic(-b) - logistic(-a)
    } else {
        logistic(a) - logistic(b)
    }
}

impl OrderedLogitProblem {
    /// Builds the count table from `(y, x)` pairs. Categories that are never
    /// observed are dropped; gaps between observed ones produce a warning.
    pub fn new(obs: &[(u32, u8)]) -> Result<Self, StatsError> {
        if let Some(&(_, x)) = obs.iter().find(|(_, x)| *x > 1) {
            return Err(StatsError::BadCovariate(x));
        }
        let observed: BTreeSet<u32> = obs.iter().map(|(y, _)| *y).collect();
        let categories: Vec<u32> = observed.into_iter().collect();
        if !obs.iter().any(|(_, x)| *x == 0) || !obs.iter().any(|(_, x)| *x == 1) {
            return Err(StatsError::MissingGroup);
        }
        if categories.len() < 2 {
            return Err(StatsError::SingleCategory);
        }
        let mut warnings = Vec::new();
        let gaps: Vec<u32> = (categories[0]..=*categories.last().expect("non-empty"))
            .filter(|c| categories.binary_search(c).is_err())
            .collect();
        if !gaps.is_empty() {
            let msg = format!("unobserved outcome categories {gaps:?} collapsed out of the model");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let k = categories.len();
        let mut counts = [vec![0.0; k], vec![0.0; k]];
        for &(y, x) in obs {
            let idx = categories.binary_search(&y).expect("observed");
            counts[x as usize][idx] += 1.0;
        }
        Ok(OrderedLogitProblem { counts, categories, n_obs: obs.len(), warnings })
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    /// Length of the parameter vector `eta`.
    pub fn n_params(&self) -> usize {
        self.categories.len()
    }

    fn beta_index(&self) -> usize {
        self.n_params() - 1
    }

    /// Ordered thresholds implied by `eta`.
    pub fn thresholds(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_categories() - 1);
        let mut theta = eta[0];
        out.push(theta);
        for delta in &eta[1..self.beta_index()] {
            theta += delta.exp();
            out.push(theta);
        }
        out
    }

    /// Maps ordered thresholds and beta back to `eta`.
    pub fn to_eta(&self, thresholds: &[f64], beta: f64) -> Vec<f64> {
        let mut eta = vec![thresholds[0]];
        eta.extend(thresholds.windows(2).map(|w| (w[1] - w[0]).ln()));
        eta.push(beta);
        eta
    }

    /// Start point: marginal cumulative logits, beta = 0.
    pub fn start(&self) -> Vec<f64> {
        let k = self.n_categories();
        let total: f64 = self.counts[0].iter().chain(&self.counts[1]).sum();
        let mut cum = 0.0;
        let mut thresholds = Vec::with_capacity(k - 1);
        for idx in 0..k - 1 {
            cum += self.counts[0][idx] + self.counts[1][idx];
            let p = ((cum + 0.5) / (total + 1.0)).clamp(1e-6, 1.0 - 1e-6);
            thresholds.push((p / (1.0 - p)).ln());
        }
        for i in 1..thresholds.len() {
            if thresholds[i] <= thresholds[i - 1] {
                thresholds[i] = thresholds[i - 1] + 1e-3;
            }
        }
        self.to_eta(&thresholds, 0.0)
    }

    /// Cell bounds (upper, lower) on the latent scale for category `idx`.
    fn bounds(&self, thresholds: &[f64], idx: usize, shift: f64) -> (f64, f64) {
        let k = self.n_categories();
        let upper = if idx + 1 < k { thresholds[idx] - shift } else { f64::INFINITY };
        let lower = if idx > 0 { thresholds[idx - 1] - shift } else { f64::NEG_INFINITY };
        (upper, lower)
    }

    pub fn log_likelihood(&self, eta: &[f64]) -> f64 {
        let thresholds = self.thresholds(eta);
        let beta = eta[self.beta_index()];
        let mut ll = 0.0;
        for (x, row) in self.counts.iter().enumerate() {
            for (idx, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (a, b) = self.bounds(&thresholds, idx, beta * x as f64);
                ll += c * interval_prob(a, b).ln();
            }
        }
        ll
    }

    /// Gradient and Hessian in the natural parameters `(theta_1..theta_{K-1}, beta)`.
    fn natural_derivatives(&self, eta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.n_params();
        let bi = self.beta_index();
        let thresholds = self.thresholds(eta);
        let beta = eta[bi];
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let k = self.n_categories();
        for (x, row) in self.counts.iter().enumerate() {
            let g = x as f64;
            for (idx, &c) in row.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let (a, b) = self.bounds(&thresholds, idx, beta * g);
                let prob = interval_prob(a, b);
                let (fa, dfa) =
                    if a.is_finite() { (density(a), density(a) * (1.0 - 2.0 * logistic(a))) } else { (0.0, 0.0) };
                let (fb, dfb) =
                    if b.is_finite() { (density(b), density(b) * (1.0 - 2.0 * logistic(b))) } else { (0.0, 0.0) };
                let da = fa / prob;
                let db = -fb / prob;
                let haa = dfa / prob - da * da;
                let hbb = -dfb / prob - db * db;
                let hab = -da * db;
                let upper = (idx + 1 < k).then_some(idx);
                let lower = (idx > 0).then(|| idx - 1);
                if let Some(u) = upper {
                    grad[u] += c * da;
                    hess[(u, u)] += c * haa;
                    hess[(u, bi)] -= c * g * (haa + hab);
                    hess[(bi, u)] -= c * g * (haa + hab);
                }
                if let Some(l) = lower {
                    grad[l] += c * db;
                    hess[(l, l)] += c * hbb;
                    hess[(l, bi)] -= c * g * (hab + hbb);
                    hess[(bi, l)] -= c * g * (hab + hbb);
                }
                if let (Some(u), Some(l)) = (upper, lower) {
                    hess[(u, l)] += c * hab;
                    hess[(l, u)] += c * hab;
                }
                grad[bi] -= c * g * (da + db);
                hess[(bi, bi)] += c * g * g * (haa + 2.0 * hab + hbb);
            }
        }
        (grad, hess)
    }

    /// d(natural) / d(eta).
    fn jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        let p = self.n_params();
        let bi = self.beta_index();
        let mut j = DMatrix::zeros(p, p);
        for t in 0..bi {
            j[(t, 0)] = 1.0;
            for d in 1..=t {
                j[(t, d)] = eta[d].exp();
            }
        }
        j[(bi, bi)] = 1.0;
        j
    }

    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let (g, _) = self.natural_derivatives(eta);
        (self.jacobian(eta).transpose() * g).iter().copied().collect()
    }

    pub fn hessian(&self, eta: &[f64]) -> DMatrix<f64> {
        let (g, h) = self.natural_derivatives(eta);
        let j = self.jacobian(eta);
        let mut out = j.transpose() * h * &j;
        // Curvature of theta_t in delta_d: exp(delta_d) for d <= t.
        for d in 1..self.beta_index() {
            let tail: f64 = (d..self.beta_index()).map(|t| g[t]).sum();
            out[(d, d)] += tail * eta[d].exp();
        }
        out
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits the model by damped Newton iteration.
///
/// Stops when the gradient max-norm drops below [`GRADIENT_TOLERANCE`] or
/// after [`MAX_ITERATIONS`] steps. Complete or quasi-complete separation of
/// the two groups is detected up front and reported as an error.
pub fn ordered_logit_fit(obs: &[(u32, u8)]) -> Result<OrderedLogitFit, StatsError> {
    let problem = OrderedLogitProblem::new(obs)?;
    let range = |x: usize| {
        let row = &problem.counts[x];
        let first = row.iter().position(|&c| c > 0.0).expect("group present");
        let last = row.iter().rposition(|&c| c > 0.0).expect("group present");
        (first, last)
    };
    let (lo0, hi0) = range(0);
    let (lo1, hi1) = range(1);
    if hi0 <= lo1 || hi1 <= lo0 {
        return Err(StatsError::Separation);
    }

    let mut eta = problem.start();
    let mut ll = problem.log_likelihood(&eta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut warnings = problem.warnings.clone();
    let p = problem.n_params();
    loop {
        let grad = problem.gradient(&eta);
        if max_abs(&grad) < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
        let neg_h = -problem.hessian(&eta);
        let g = DVector::from_vec(grad);
        // Levenberg damping until -H is positive definite.
        let mut lambda = 0.0;
        let step = loop {
            let mut m = neg_h.clone();
            for i in 0..p {
                m[(i, i)] += lambda;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&g);
            }
            lambda = if lambda == 0.0 { 1e-6 * (1.0 + neg_h.diagonal().amax()) } else { lambda * 10.0 };
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = eta.iter().zip(step.iter()).map(|(e, s)| e + scale * s).collect();
            let cand_ll = problem.log_likelihood(&cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                eta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No representable improvement along the Newton direction.
            break;
        }
        iterations += 1;
        trace.push(ll);
    }
    if !converged {
        let msg = format!("ordered logit did not converge after {iterations} iterations");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let beta = eta[p - 1];
    let neg_h = -problem.hessian(&eta);
    let std_err_beta =
        neg_h.clone().try_inverse().map(|cov| cov[(p - 1, p - 1)]).filter(|v| *v > 0.0).map_or(f64::NAN, f64::sqrt);
    let z = beta / std_err_beta;
    let p_value = if z.is_finite() {
        (2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z.abs())).min(1.0)
    } else {
        f64::NAN
    };
    Ok(OrderedLogitFit {
        beta,
        thresholds: problem.thresholds(&eta),
        std_err_beta,
        z,
        p_value,
        log_likelihood: ll,
        iterations,
        converged,
        categories: problem.categories.clone(),
        n_obs: problem.n_obs,
        trace,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(u32, u8, usize)]) -> Vec<(u32, u8)> {
        rows.iter().flat_map(|&(y, x, n)| vec![(y, x); n]).collect()
    }

    #[test]
    fn identical_groups_give_zero_beta() {
        let obs = table(&[(1, 0, 5), (2, 0, 9), (3, 0, 4), (1, 1, 5), (2, 1, 9), (3, 1, 4)]);
        let fit = ordered_logit_fit(&obs).unwrap();
        assert!(fit.converged);
        assert!(fit.beta.abs() < 1e-6, "{}", fit.beta);
        assert!(fit.p_value > 0.99);
        assert!(fit.thresholds.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn two_category_model_matches_logistic_regression() {
        // With K = 2 the model is logit P(y=2|x) = beta*x - theta, whose MLE is
        // the log odds ratio of the 2x2 table.
        let obs = table(&[(1, 0, 30), (2, 0, 10), (1, 1, 15), (2, 1, 25)]);
        let fit = ordered_logit_fit(&obs).unwrap();
        let expected = ((25.0_f64 / 15.0) / (10.0 / 30.0)).ln();
        assert!((fit.beta - expected).abs() < 1e-8, "{} vs {expected}", fit.beta);
        // Wald SE of a log odds ratio: sqrt(sum 1/n_ij).
        let se = (1.0 / 30.0 + 1.0 / 10.0 + 1.0 / 15.0 + 1.0 / 25.0f64).sqrt();
        assert!((fit.std_err_beta - se).abs() < 1e-8);
    }

    #[test]
    fn gap_categories_collapse_with_warning() {
        let obs = table(&[(1, 0, 5), (4, 0, 3), (5, 0, 2), (1, 1, 2), (4, 1, 4), (5, 1, 4)]);
        let fit = ordered_logit_fit(&obs).unwrap();
        assert_eq!(fit.categories, vec![1, 4, 5]);
        assert_eq!(fit.thresholds.len(), 2);
        assert_eq!(fit.warnings.len(), 1);
        assert!(fit.beta > 0.0);
    }

    #[test]
    fn error_cases() {
        assert_eq!(ordered_logit_fit(&table(&[(1, 0, 3), (2, 0, 3)])), Err(StatsError::MissingGroup));
        assert_eq!(ordered_logit_fit(&table(&[(2, 0, 3), (2, 1, 3)])), Err(StatsError::SingleCategory));
        assert_eq!(ordered_logit_fit(&[(1, 2)]), Err(StatsError::BadCovariate(2)));
        assert_eq!(ordered_logit_fit(&table(&[(1, 0, 3), (3, 1, 3)])), Err(StatsError::Separation));
        assert_eq!(
            ordered_logit_fit(&table(&[(1, 0, 3), (2, 0, 2), (2, 1, 2), (3, 1, 3)])),
            Err(StatsError::Separation)
        );
    }

    #[test]
    fn eta_round_trip() {
        let obs = table(&[(1, 0, 1), (2, 1, 1), (3, 0, 1), (4, 1, 1), (2, 0, 1)]);
        let problem = OrderedLogitProblem::new(&obs).unwrap();
        let eta = problem.to_eta(&[-1.0, 0.5, 2.0], 0.3);
        assert_eq!(eta.len(), problem.n_params());
        let back = problem.thresholds(&eta);
        for (a, b) in back.iter().zip([-1.0, 0.5, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
