//! Nuisance models: linear outcome means, logistic propensities (fitted by
//! IRLS), the selection odds `q(X)` and the constant variance ratio `r(X)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{derive_counts, DesignMethod, FunctionSpec, SubjectRecord, TrialDataset};

pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
/// Ridge used on the automatic retry after a failed unpenalized fit.
pub const RETRY_RIDGE: f64 = 1e-6;

/// Evaluates a linear predictor `c₀ + cᵀx`.
pub fn linear_predict(coefficients: &[f64], x: &[f64]) -> f64 {
    coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(x)
            .map(|(c, v)| c * v)
            .sum::<f64>()
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Design matrix with a leading column of ones.
pub fn design_matrix<'a, I>(records: I, p: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a SubjectRecord>,
{
    let rows: Vec<&SubjectRecord> = records.into_iter().collect();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            rows[i].x[j - 1]
        }
    })
}

fn column_name(j: usize, include_intercept: bool) -> String {
    match (include_intercept, j) {
        (true, 0) => "intercept".to_string(),
        (true, j) => format!("x{j}"),
        (false, j) => format!("x{}", j + 1),
    }
}

/// Ordinary least squares of `y` on the covariates via a QR factorization.
///
/// Returns `p + 1` coefficients, intercept first (zero when
/// `include_intercept` is false).
pub fn fit_linear_mean(
    records: &[&SubjectRecord],
    p: usize,
    include_intercept: bool,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyArm(
            "least-squares fit on an empty subset".into(),
        ));
    }
    let offset = usize::from(!include_intercept);
    let k = p + 1 - offset;
    let n = records.len();
    let x = DMatrix::from_fn(n, k, |i, j| {
        let col = j + offset;
        if col == 0 {
            1.0
        } else {
            records[i].x[col - 1]
        }
    });
    let y = DVector::from_iterator(n, records.iter().map(|r| r.y));
    if n < k {
        return Err(Error::SingularFit {
            column: column_name(n, include_intercept),
        });
    }
    let scale = (0..k)
        .map(|j| x.column(j).norm())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let qr = x.qr();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale {
            return Err(Error::SingularFit {
                column: column_name(j, include_intercept),
            });
        }
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularFit {
            column: column_name(k - 1, include_intercept),
        })?;
    let mut out = vec![0.0; p + 1];
    for j in 0..k {
        out[j + offset] = beta[j];
    }
    Ok(out)
}

/// Result of an IRLS logistic fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    /// Penalized deviance before the first step and after each iteration.
    pub deviance_trace: Vec<f64>,
}

fn penalized_deviance(
    labels: &[f64],
    design: &DMatrix<f64>,
    beta: &DVector<f64>,
    ridge: f64,
) -> f64 {
    let eta = design * beta;
    let dev: f64 = labels
        .iter()
        .zip(eta.iter())
        .map(|(y, e)| 2.0 * (softplus(*e) - y * e))
        .sum();
    let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    dev + ridge * pen
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Column 0 of `design` is treated as the intercept and left unpenalized;
/// `ridge` penalizes the remaining coefficients.
pub fn fit_logistic_irls(labels: &[u8], design: &DMatrix<f64>, ridge: f64) -> Result<LogisticFit> {
    let n = labels.len();
    let k = design.ncols();
    if design.nrows() != n {
        return Err(Error::invalid(
            "design",
            "row count differs from label count",
        ));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid(
            "ridge",
            "must be a finite nonnegative number",
        ));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::invalid("labels", "both classes must be present"));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();

    let mut beta = DVector::zeros(k);
    if k > 0 && design.column(0).iter().all(|v| *v == 1.0) {
        let mean = ones as f64 / n as f64;
        beta[0] = (mean / (1.0 - mean)).ln();
    }
    let mut dev = penalized_deviance(&y, design, &beta, ridge);
    let mut trace = vec![dev];

    for iter in 1..=IRLS_MAX_ITER {
        let eta = design * &beta;
        let prob: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let row = design.row(i);
            let resid = y[i] - prob[i];
            let w = (prob[i] * (1.0 - prob[i])).max(1e-300);
            for a in 0..k {
                grad[a] += row[a] * resid;
                for b in a..k {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for j in 1..k {
            grad[j] -= ridge * beta[j];
            hess[(j, j)] += ridge;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess
                .clone()
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::NonConvergence {
                    iterations: iter,
                    separation: false,
                    last_iterate: beta.iter().copied().collect(),
                })?,
        };

        // step halving keeps the penalized deviance non-increasing
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_dev = penalized_deviance(&y, design, &candidate, ridge);
        let mut halvings = 0;
        while !(cand_dev <= dev) && halvings < 40 {
            t *= 0.5;
            candidate = &beta + &step * t;
            cand_dev = penalized_deviance(&y, design, &candidate, ridge);
            halvings += 1;
        }
        if !(cand_dev <= dev) {
            // no descent available: we are at numerical optimum
            candidate = beta.clone();
            cand_dev = dev;
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        dev = cand_dev;
        trace.push(dev);

        let max_eta = (design * &beta).amax();
        if !dev.is_finite() || !beta.iter().all(|b| b.is_finite()) || max_eta > 50.0 || dev < 1e-9 {
            return Err(Error::NonConvergence {
                iterations: iter,
                separation: true,
                last_iterate: beta.iter().copied().collect(),
            });
        }
        if change < IRLS_TOLERANCE {
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                iterations: iter,
                converged: true,
                ridge,
                deviance_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: IRLS_MAX_ITER,
        separation: false,
        last_iterate: beta.iter().copied().collect(),
    })
}

/// Unpenalized fit with one automatic retry at [`RETRY_RIDGE`].
pub fn fit_logistic_with_retry(
    labels: &[u8],
    design: &DMatrix<f64>,
    ridge: f64,
) -> Result<LogisticFit> {
    match fit_logistic_irls(labels, design, ridge) {
        Err(Error::NonConvergence { .. }) if ridge == 0.0 => {
            fit_logistic_irls(labels, design, RETRY_RIDGE)
        }
        other => other,
    }
}

/// Constant variance ratio: mean squared internal-control residual over mean
/// squared external residual, both from the same `μ̂₀`.
pub fn estimate_variance_ratio_constant(d: &TrialDataset, mu0: &[f64]) -> Result<f64> {
    let c = derive_counts(d);
    if c.n_c < 2 || c.n_e < 2 {
        return Err(Error::EmptyArm(format!(
            "variance ratio needs at least 2 internal and 2 external controls (have {} and {})",
            c.n_c, c.n_e
        )));
    }
    let sq = |rec: &SubjectRecord| {
        let e = rec.y - linear_predict(mu0, &rec.x);
        e * e
    };
    let internal: f64 = d
        .records
        .iter()
        .filter(|r| r.is_internal_control())
        .map(sq)
        .sum::<f64>()
        / c.n_c as f64;
    let external: f64 = d
        .records
        .iter()
        .filter(|r| r.is_external())
        .map(sq)
        .sum::<f64>()
        / c.n_e as f64;
    if !(external > 0.0) {
        return Err(Error::DegenerateRatio(
            "external residual variance is zero".into(),
        ));
    }
    let ratio = internal / external;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::DegenerateRatio(format!(
            "ratio {ratio} is not positive and finite"
        )));
    }
    Ok(ratio)
}

/// How the current-study treatment propensity is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum PropensityMode {
    /// The design's randomization constant.
    Known(f64),
    /// `N_t / N_R` from the data.
    Empirical,
    /// Logistic regression of A on X within the current study.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "coefficients", rename_all = "snake_case")]
pub enum Propensity {
    Known(f64),
    Logistic(Vec<f64>),
}

impl Propensity {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            Propensity::Known(p) => *p,
            Propensity::Logistic(c) => sigmoid(linear_predict(c, x)),
        }
    }
}

/// Which controls train `μ̂₀` for the hybrid estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mu0Source {
    /// Internal and external controls together.
    #[default]
    Pooled,
    InternalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub mu0_source: Mu0Source,
    pub propensity: PropensityMode,
    pub ridge: f64,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions {
            mu0_source: Mu0Source::Pooled,
            propensity: PropensityMode::Empirical,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub q_iterations: Option<usize>,
    pub q_converged: Option<bool>,
    pub q_ridge: Option<f64>,
    pub pi_iterations: Option<usize>,
    pub pi_converged: Option<bool>,
}

/// Every nuisance estimate the estimators consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub mu1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub pi_a: Propensity,
    /// Logit of `π_R(X) = P(R=1|X)`; `q(X)` is its exponential.
    pub q_logit: Option<Vec<f64>>,
    pub r_hat: FunctionSpec,
    pub fit_diagnostics: FitDiagnostics,
}

impl NuisanceFit {
    pub fn mu1_at(&self, x: &[f64]) -> f64 {
        linear_predict(&self.mu1, x)
    }

    pub fn mu0_at(&self, x: &[f64]) -> f64 {
        linear_predict(&self.mu0, x)
    }
}

/// `q̂(x) = exp(logit π̂_R(x))`.
pub fn evaluate_selection_q(fit: &NuisanceFit, x: &[f64]) -> Result<f64> {
    let c = fit
        .q_logit
        .as_ref()
        .ok_or_else(|| Error::Config("selection model has not been fitted".into()))?;
    if c.len() != x.len() + 1 {
        return Err(Error::Config(format!(
            "selection model has {} coefficients for covariates of width {}",
            c.len(),
            x.len()
        )));
    }
    Ok(linear_predict(c, x).exp())
}

fn arm_mean<'a>(rows: impl Iterator<Item = &'a SubjectRecord>) -> Option<f64> {
    let (s, n) = rows.fold((0.0, 0usize), |(s, n), r| (s + r.y, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Fits the nuisance models `method` needs on `d`.
pub fn fit_nuisance(
    method: DesignMethod,
    d: &TrialDataset,
    opts: &NuisanceOptions,
) -> Result<NuisanceFit> {
    let c = derive_counts(d);
    let p = d.p;
    let mut diag = FitDiagnostics::default();

    if method == DesignMethod::DiffInMeans {
        let mut mu1 = vec![0.0; p + 1];
        let mut mu0 = vec![0.0; p + 1];
        mu1[0] = arm_mean(d.records.iter().filter(|r| r.is_treated()))
            .ok_or_else(|| Error::EmptyArm("no treated subjects".into()))?;
        mu0[0] = arm_mean(d.records.iter().filter(|r| r.is_internal_control()))
            .ok_or_else(|| Error::EmptyArm("no internal controls".into()))?;
        return Ok(NuisanceFit {
            mu1,
            mu0,
            pi_a: Propensity::Known(c.n_t as f64 / c.n_r as f64),
            q_logit: None,
            r_hat: FunctionSpec::constant(0.0),
            fit_diagnostics: diag,
        });
    }

    let treated: Vec<&SubjectRecord> = d.records.iter().filter(|r| r.is_treated()).collect();
    let mu1 = fit_linear_mean(&treated, p, true)?;

    let controls: Vec<&SubjectRecord> = match (method, opts.mu0_source) {
        (DesignMethod::Aipw, _) | (DesignMethod::HybridEc, Mu0Source::InternalOnly) => d
            .records
            .iter()
            .filter(|r| r.is_internal_control())
            .collect(),
        _ => d.records.iter().filter(|r| r.r == 0 || r.a == 0).collect(),
    };
    let mu0 = fit_linear_mean(&controls, p, true)?;

    let pi_a = if method == DesignMethod::SingleArm {
        Propensity::Known(1.0)
    } else {
        match opts.propensity {
            PropensityMode::Known(v) => {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::invalid("pi_a", format!("{v} is not in (0, 1)")));
                }
                Propensity::Known(v)
            }
            PropensityMode::Empirical => {
                if c.n_r == 0 {
                    return Err(Error::EmptyArm("no current-study subjects".into()));
                }
                Propensity::Known(c.n_t as f64 / c.n_r as f64)
            }
            PropensityMode::Logistic => {
                let current: Vec<&SubjectRecord> = d.current().collect();
                let labels: Vec<u8> = current.iter().map(|r| r.a).collect();
                let x = design_matrix(current.iter().copied(), p);
                let fit = fit_logistic_with_retry(&labels, &x, opts.ridge)?;
                diag.pi_iterations = Some(fit.iterations);
                diag.pi_converged = Some(fit.converged);
                Propensity::Logistic(fit.coefficients)
            }
        }
    };

    let q_logit = if method.uses_external() {
        let labels: Vec<u8> = d.records.iter().map(|r| r.r).collect();
        let x = design_matrix(&d.records, p);
        let fit = fit_logistic_with_retry(&labels, &x, opts.ridge)?;
        diag.q_iterations = Some(fit.iterations);
        diag.q_converged = Some(fit.converged);
        diag.q_ridge = Some(fit.ridge);
        Some(fit.coefficients)
    } else {
        None
    };

    let r_hat = match method {
        DesignMethod::HybridEc => {
            FunctionSpec::constant(estimate_variance_ratio_constant(d, &mu0)?)
        }
        // cancels out of the single-arm estimator
        DesignMethod::SingleArm => FunctionSpec::constant(1.0),
        _ => FunctionSpec::constant(0.0),
    };

    Ok(NuisanceFit {
        mu1,
        mu0,
        pi_a,
        q_logit,
        r_hat,
        fit_diagnostics: diag,
    })
}
