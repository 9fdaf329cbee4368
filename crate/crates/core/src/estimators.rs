//! Treatment-effect estimators, influence-function variances and the Wald
//! test of `H₀: τ = 0`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{derive_counts, validate_dataset, Counts, DesignMethod, TrialDataset};
use crate::nuisance::{evaluate_selection_q, fit_nuisance, NuisanceFit, NuisanceOptions};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Smallest admissible `q̂(1−π̂_A) + r̂` on a row that carries weight.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: DesignMethod,
    pub tau_hat: f64,
    /// Estimated variance of `√N_R(τ̂ − τ)`.
    pub v_hat: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_r: usize,
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn check_arms(method: DesignMethod, d: &TrialDataset) -> Result<Counts> {
    let c = validate_dataset(d).into_result()?;
    let need = |ok: bool, what: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::EmptyArm(format!("{method} requires {what}")))
        }
    };
    match method {
        DesignMethod::DiffInMeans | DesignMethod::Aipw => need(
            c.n_t >= 2 && c.n_c >= 2,
            "at least 2 treated and 2 internal controls",
        )?,
        DesignMethod::HybridEc => need(
            c.n_t >= 2 && c.n_c >= 2 && c.n_e >= 2,
            "at least 2 treated, 2 internal controls and 2 external controls",
        )?,
        DesignMethod::SingleArm => {
            need(c.n_c == 0, "every current-study subject to be treated")?;
            need(
                c.n_t >= 2 && c.n_e >= 2,
                "at least 2 treated and 2 external controls",
            )?;
        }
    }
    Ok(c)
}

/// Per-row summands of the estimator; their sum over all rows divided by
/// `N_R` is `τ̂`.
fn contributions(method: DesignMethod, d: &TrialDataset, fit: &NuisanceFit) -> Result<Vec<f64>> {
    if method == DesignMethod::DiffInMeans {
        return Err(Error::Config(
            "difference in means has no augmented contributions".into(),
        ));
    }
    fit.r_hat.check_dimension(d.p)?;
    let mut out = Vec::with_capacity(d.records.len());
    for rec in &d.records {
        let x = rec.x.as_slice();
        let r_i = f64::from(rec.r);
        let a_i = f64::from(rec.a);
        let m1 = fit.mu1_at(x);
        let m0 = fit.mu0_at(x);
        let (pi, r_hat) = match method {
            DesignMethod::SingleArm => (1.0, 1.0),
            DesignMethod::Aipw => (fit.pi_a.evaluate(x), 0.0),
            _ => (fit.pi_a.evaluate(x), fit.r_hat.eval_unchecked(x)),
        };
        let mut v = 0.0;
        if rec.r == 1 {
            v += m1 - m0;
            if rec.a == 1 {
                v += (rec.y - m1) / pi;
            }
        }
        let weight = r_i * (1.0 - a_i) + (1.0 - r_i) * r_hat;
        if weight != 0.0 {
            let q = if method == DesignMethod::Aipw {
                1.0
            } else {
                evaluate_selection_q(fit, x)?
            };
            let denom = q * (1.0 - pi) + r_hat;
            if !(denom >= DENOMINATOR_FLOOR) {
                return Err(Error::NonFinite(format!(
                    "selection-weight denominator {denom:e} is below {DENOMINATOR_FLOOR:e}"
                )));
            }
            v -= weight * q * (rec.y - m0) / denom;
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("estimator contribution".into()));
        }
        out.push(v);
    }
    Ok(out)
}

fn mean_and_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n as f64 - 1.0), n)
}

/// Point estimate and influence-function variance; the Wald test is applied
/// at [`DEFAULT_ALPHA`] (see [`wald_test`] to change it).
pub fn estimate_effect(
    method: DesignMethod,
    d: &TrialDataset,
    fit: &NuisanceFit,
) -> Result<EstimateResult> {
    let c = check_arms(method, d)?;
    let n_r = c.n_r as f64;
    let (tau_hat, v_hat) = if method == DesignMethod::DiffInMeans {
        let (m1, s1, _) = mean_and_var(d.records.iter().filter(|r| r.is_treated()).map(|r| r.y));
        let (m0, s0, _) = mean_and_var(
            d.records
                .iter()
                .filter(|r| r.is_internal_control())
                .map(|r| r.y),
        );
        let pi = c.n_t as f64 / n_r;
        (m1 - m0, s1 / pi + s0 / (1.0 - pi))
    } else {
        let contrib = contributions(method, d, fit)?;
        let tau = contrib.iter().sum::<f64>() / n_r;
        let ss: f64 = contrib
            .iter()
            .zip(&d.records)
            .map(|(v, rec)| {
                let e = v - f64::from(rec.r) * tau;
                e * e
            })
            .sum();
        (tau, ss / n_r)
    };
    if !(tau_hat.is_finite() && v_hat.is_finite()) {
        return Err(Error::NonFinite("estimate or variance".into()));
    }
    if !(v_hat > 0.0) {
        return Err(Error::NonFinite(format!(
            "estimated variance {v_hat} is not positive"
        )));
    }
    let res = EstimateResult {
        method,
        tau_hat,
        v_hat,
        se: (v_hat / n_r).sqrt(),
        z: 0.0,
        p_value: 1.0,
        reject: false,
        alpha: DEFAULT_ALPHA,
        ci_low: tau_hat,
        ci_high: tau_hat,
        n_r: c.n_r,
    };
    Ok(wald_test(res, DEFAULT_ALPHA))
}

/// Estimated influence function `ψ̂ᵢ` for every row, with `P(R=1)` estimated
/// by `N_R/N`.
pub fn influence_values(
    method: DesignMethod,
    d: &TrialDataset,
    fit: &NuisanceFit,
    tau_hat: f64,
) -> Result<Vec<f64>> {
    let c = check_arms(method, d)?;
    let p_r = c.n_r as f64 / c.total() as f64;
    if method == DesignMethod::DiffInMeans {
        let (m1, _, _) = mean_and_var(d.records.iter().filter(|r| r.is_treated()).map(|r| r.y));
        let (m0, _, _) = mean_and_var(
            d.records
                .iter()
                .filter(|r| r.is_internal_control())
                .map(|r| r.y),
        );
        let pi = c.n_t as f64 / c.n_r as f64;
        return Ok(d
            .records
            .iter()
            .map(|rec| match (rec.r, rec.a) {
                (1, 1) => (rec.y - m1) / pi / p_r,
                (1, _) => -(rec.y - m0) / (1.0 - pi) / p_r,
                _ => 0.0,
            })
            .collect());
    }
    let contrib = contributions(method, d, fit)?;
    Ok(contrib
        .iter()
        .zip(&d.records)
        .map(|(v, rec)| (v - f64::from(rec.r) * tau_hat) / p_r)
        .collect())
}

/// Two-sided Wald test and confidence interval at level `alpha`.
///
/// Rejection is `|z| > z_{1−α/2}`, which coincides with `0 ∉ CI`.
pub fn wald_test(mut res: EstimateResult, alpha: f64) -> EstimateResult {
    let n = std_normal();
    let crit = n.inverse_cdf(1.0 - alpha / 2.0);
    res.alpha = alpha;
    res.z = if res.tau_hat == 0.0 {
        0.0
    } else {
        res.tau_hat / res.se
    };
    res.p_value = (2.0 * n.cdf(-res.z.abs())).min(1.0);
    res.reject = res.z.abs() > crit;
    res.ci_low = res.tau_hat - crit * res.se;
    res.ci_high = res.tau_hat + crit * res.se;
    res
}

/// Fits the nuisance models and estimates in one step.
pub fn fit_and_estimate(
    method: DesignMethod,
    d: &TrialDataset,
    opts: &NuisanceOptions,
    alpha: f64,
) -> Result<EstimateResult> {
    check_arms(method, d)?;
    let fit = fit_nuisance(method, d, opts)?;
    Ok(wald_test(estimate_effect(method, d, &fit)?, alpha))
}

/// Counts for `d` after the method-specific arm checks.
pub fn checked_counts(method: DesignMethod, d: &TrialDataset) -> Result<Counts> {
    check_arms(method, d).map(|_| derive_counts(d))
}
