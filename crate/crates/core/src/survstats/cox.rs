use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{concordance_index, split_labels, CohortTable, StatsError, SurvivalLabel};

const Z_975: f64 = 1.959_963_984_540_054;

/// Newton-Raphson settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub max_iter: usize,
    /// Convergence when every |Δβ| falls below this.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-9, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateFit {
    pub name: String,
    /// Coefficient per standard deviation of the covariate.
    pub coef: f64,
    pub se: f64,
    pub hazard_ratio: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub covariates: Vec<CovariateFit>,
    /// C-index of the fitted linear predictor.
    pub c_index: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Euclidean norm of the score at the solution.
    pub gradient_norm: f64,
}

struct Evaluation {
    ll: f64,
    grad: DVector<f64>,
    info: DMatrix<f64>,
}

/// Subjects sorted by descending time, grouped by equal time.
struct Order {
    idx: Vec<usize>,
    groups: Vec<(usize, usize)>,
}

fn order_by_time(labels: &[SurvivalLabel]) -> Order {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));
    let mut groups = Vec::new();
    let mut g = 0;
    while g < idx.len() {
        let mut e = g;
        while e < idx.len() && labels[idx[e]].time == labels[idx[g]].time {
            e += 1;
        }
        groups.push((g, e));
        g = e;
    }
    Order { idx, groups }
}

/// Efron partial log-likelihood with its gradient and observed information.
fn evaluate(x: &DMatrix<f64>, labels: &[SurvivalLabel], order: &Order, beta: &DVector<f64>) -> Evaluation {
    let p = x.ncols();
    let eta = x * beta;
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    for &(g0, g1) in &order.groups {
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        let mut d = 0usize;
        for &i in &order.idx[g0..g1] {
            let w = eta[i].exp();
            let xi = x.row(i).transpose();
            s0 += w;
            s1 += w * &xi;
            s2 += w * &xi * xi.transpose();
            if labels[i].event {
                d += 1;
                d0 += w;
                d1 += w * &xi;
                d2 += w * &xi * xi.transpose();
                ll += eta[i];
                grad += &xi;
            }
        }
        for l in 0..d {
            let f = l as f64 / d as f64;
            let a0 = s0 - f * d0;
            let a1 = &s1 - f * &d1;
            let a2 = &s2 - f * &d2;
            ll -= a0.ln();
            let m = &a1 / a0;
            grad -= &m;
            info += a2 / a0 - &m * m.transpose();
        }
    }
    Evaluation { ll, grad, info }
}

/// Efron partial log-likelihood of `beta` for covariate rows `x`.
pub fn partial_log_likelihood(x: &[Vec<f64>], labels: &[SurvivalLabel], beta: &[f64]) -> f64 {
    let p = beta.len();
    let m = DMatrix::from_fn(x.len(), p, |i, j| x[i][j]);
    evaluate(&m, labels, &order_by_time(labels), &DVector::from_column_slice(beta)).ll
}

/// Raw Newton-Raphson fit on an `n x p` design; returns coefficients, their
/// covariance, the log-likelihood, iteration count and final score norm.
pub(crate) fn newton(
    x: &DMatrix<f64>,
    labels: &[SurvivalLabel],
    opts: &CoxOptions,
) -> Result<(DVector<f64>, DMatrix<f64>, f64, usize, f64), StatsError> {
    if !labels.iter().any(|l| l.event) {
        return Err(StatsError::NoEvents);
    }
    let order = order_by_time(labels);
    let mut beta = DVector::zeros(x.ncols());
    let mut cur = evaluate(x, labels, &order, &beta);
    for it in 1..=opts.max_iter {
        // information lost after the first step means the estimate is running
        // off to infinity rather than a degenerate design
        let chol = cur.info.clone().cholesky().ok_or(if it == 1 {
            StatsError::Singular
        } else {
            StatsError::NonConvergence { iterations: it }
        })?;
        let mut step = chol.solve(&cur.grad);
        // convergence is judged on the full Newton step so that step-halving
        // cannot fake it on a flat or monotone likelihood
        let delta = step.amax();
        let mut next_beta = &beta + &step;
        let mut next = evaluate(x, labels, &order, &next_beta);
        let mut halvings = 0;
        // changes below the rounding level of the log-likelihood are not
        // treated as a decrease
        let slack = 1e-12 * (1.0 + cur.ll.abs());
        while !(next.ll >= cur.ll - slack) && halvings < opts.max_halvings {
            step /= 2.0;
            next_beta = &beta + &step;
            next = evaluate(x, labels, &order, &next_beta);
            halvings += 1;
        }
        if !next.ll.is_finite() || next_beta.iter().any(|b| !b.is_finite()) {
            return Err(StatsError::NonConvergence { iterations: it });
        }
        beta = next_beta;
        cur = next;
        if delta < opts.tol {
            let cov = cur.info.clone().cholesky().ok_or(StatsError::Singular)?.inverse();
            let gnorm = cur.grad.norm();
            return Ok((beta, cov, cur.ll, it, gnorm));
        }
    }
    Err(StatsError::NonConvergence { iterations: opts.max_iter })
}

fn standardize(col: &[f64]) -> Result<Vec<f64>, StatsError> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(StatsError::Singular);
    }
    Ok(col.iter().map(|v| (v - mean) / sd).collect())
}

/// Cox proportional-hazards fit on z-scored covariates with Efron ties.
pub fn coxph_fit(table: &CohortTable, covariates: &[&str]) -> Result<FitReport, StatsError> {
    coxph_fit_with(table, covariates, &CoxOptions::default())
}

pub(crate) fn coxph_fit_with(table: &CohortTable, covariates: &[&str], opts: &CoxOptions) -> Result<FitReport, StatsError> {
    let cols = covariates
        .iter()
        .map(|name| table.column(name).and_then(standardize))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = (0..table.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    coxph_fit_matrix(&rows, &table.labels, covariates, opts)
}

/// Fit on an already prepared design (rows = subjects); no standardisation.
pub fn coxph_fit_matrix(
    rows: &[Vec<f64>],
    labels: &[SurvivalLabel],
    names: &[&str],
    opts: &CoxOptions,
) -> Result<FitReport, StatsError> {
    let p = names.len();
    if rows.len() != labels.len() || rows.iter().any(|r| r.len() != p) {
        return Err(StatsError::LengthMismatch(format!("{} rows, {} labels, {p} names", rows.len(), labels.len())));
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let (beta, cov, ll, iterations, gradient_norm) = newton(&x, labels, opts)?;
    let normal = Normal::standard();
    let fits = (0..p)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = beta[j] / se;
            CovariateFit {
                name: names[j].to_string(),
                coef: beta[j],
                se,
                hazard_ratio: beta[j].exp(),
                ci_lower: (beta[j] - Z_975 * se).exp(),
                ci_upper: (beta[j] + Z_975 * se).exp(),
                z,
                p_value: (2.0 * normal.sf(z.abs())).min(1.0),
            }
        })
        .collect();
    let lp: Vec<f64> = (x * &beta).iter().copied().collect();
    let (t, e) = split_labels(labels);
    let c_index = concordance_index(&t, &e, &lp).unwrap_or(0.5);
    Ok(FitReport { covariates: fits, c_index, log_likelihood: ll, iterations, gradient_norm })
}
