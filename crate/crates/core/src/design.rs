//! Design-stage engine: power, asymptotic variances of the four designs,
//! pre-experimental input estimation from an external-control sample, and
//! sample-size solvers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{Error, Result};
use crate::estimators::std_normal;
use crate::model::{
    DesignInputs, DesignMethod, DesignOverrides, FunctionSpec, SubjectRecord, TrialDataset,
    VarianceComponents,
};
use crate::nuisance::{fit_linear_mean, linear_predict};

pub const DEFAULT_GRID_MAX: u64 = 10_000;
const GRID_CHUNK: u64 = 128;
/// Relative slack when comparing κ² against σ² (both may be equal by
/// construction).
const KAPPA_SLACK: f64 = 1e-12;

/// Two-sided power of the level-`alpha` Wald test at effect `tau`.
pub fn power_at(tau: f64, v: f64, n_r: u64, alpha: f64) -> f64 {
    let n = std_normal();
    let z = n.inverse_cdf(alpha / 2.0);
    let shift = (n_r as f64).sqrt() * tau / v.sqrt();
    n.cdf(z + shift) + n.cdf(z - shift)
}

/// `K = {Φ⁻¹(1−β) − Φ⁻¹(α/2)}²`.
pub fn k_factor(alpha: f64, target_power: f64) -> f64 {
    let n = std_normal();
    (n.inverse_cdf(target_power) - n.inverse_cdf(alpha / 2.0)).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    pub tau: f64,
    pub alpha: f64,
    pub target_power: f64,
}

impl PowerSpec {
    pub fn from_inputs(inp: &DesignInputs) -> Self {
        PowerSpec {
            tau: inp.tau,
            alpha: inp.alpha,
            target_power: 1.0 - inp.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{} is not in (0, 1)", self.alpha),
            ));
        }
        if !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(Error::invalid(
                "power",
                format!("{} is not in (0, 1)", self.target_power),
            ));
        }
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau", "must be finite"));
        }
        Ok(())
    }

    fn validate_for_sizing(&self) -> Result<()> {
        self.validate()?;
        if self.tau == 0.0 {
            return Err(Error::invalid(
                "tau",
                "sizing is undefined for a zero effect",
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        k_factor(self.alpha, self.target_power)
    }
}

/// Per-point values of σ²₀,₀(X), r(X) and d(X) over the integration support,
/// with `w1 = d / mean(d)` for expectations over the current study.
#[derive(Debug, Clone)]
struct Support {
    s: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
    w1: Option<Vec<f64>>,
}

impl Support {
    fn build(inp: &DesignInputs) -> Result<Support> {
        let points: Vec<Vec<f64>> = if let Some(ec) = &inp.ec_sample {
            if ec.records.is_empty() {
                return Err(Error::Config("integration sample is empty".into()));
            }
            ec.records.iter().map(|r| r.x.clone()).collect()
        } else if let Some(model) = &inp.covariate_model {
            model.sample()?
        } else {
            let consts = [
                ("sigma2_00_x", &inp.sigma2_00_x),
                ("r_fn", &inp.r_fn),
                ("d_fn", &inp.d_fn),
            ];
            let mut vals = [0.0; 3];
            for (slot, (name, f)) in vals.iter_mut().zip(consts) {
                *slot = f.as_constant().ok_or_else(|| {
                    Error::Config(format!(
                        "{name} depends on x but neither ec_sample nor covariate_model supplies an integration sample"
                    ))
                })?;
            }
            return Support::from_values(vec![vals[0]], vec![vals[1]], vec![vals[2]]);
        };
        let p = points[0].len();
        if points.iter().any(|x| x.len() != p) {
            return Err(Error::Config(
                "integration sample rows differ in width".into(),
            ));
        }
        for f in [&inp.sigma2_00_x, &inp.r_fn, &inp.d_fn] {
            f.check_dimension(p)?;
        }
        let eval = |f: &FunctionSpec| -> Vec<f64> {
            match f.as_constant() {
                Some(c) => vec![c; points.len()],
                None => points.iter().map(|x| f.eval_unchecked(x)).collect(),
            }
        };
        Support::from_values(eval(&inp.sigma2_00_x), eval(&inp.r_fn), eval(&inp.d_fn))
    }

    fn from_values(s: Vec<f64>, r: Vec<f64>, d: Vec<f64>) -> Result<Support> {
        for (name, v) in [("sigma2_00_x", &s), ("r_fn", &r), ("d_fn", &d)] {
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::invalid(
                    name,
                    "must be finite and nonnegative on the integration sample",
                ));
            }
        }
        let mean_d = d.iter().sum::<f64>() / d.len() as f64;
        let w1 = (mean_d > 0.0).then(|| d.iter().map(|v| v / mean_d).collect());
        Ok(Support { s, r, d, w1 })
    }

    fn w1(&self) -> Result<&[f64]> {
        self.w1.as_deref().ok_or_else(|| {
            Error::Config("d_fn averages to zero; current-study expectations are undefined".into())
        })
    }

    fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
        v.sum::<f64>() / n as f64
    }
}

/// Which borrowing weight enters terms 2 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Borrowing {
    /// The supplied `r(X)`.
    Ratio,
    /// No borrowing: the weight is zero while `σ²₀,₁(X) = r(X)σ²₀,₀(X)` is
    /// kept, which yields the AIPW variance.
    None,
}

/// Design inputs prepared for repeated variance evaluation.
#[derive(Debug, Clone)]
pub struct DesignEvaluator {
    pub inputs: DesignInputs,
    support: std::result::Result<Support, String>,
    kappa0_sq: Option<f64>,
}

impl DesignEvaluator {
    pub fn new(inp: &DesignInputs) -> Result<DesignEvaluator> {
        inp.validate()?;
        let support = Support::build(inp);
        // support errors only matter to methods that integrate over X
        let (support, kappa0_sq) = match support {
            Ok(s) => {
                let k0 = match s.w1() {
                    Ok(w) => Some(Support::mean(
                        w.iter().zip(&s.r).zip(&s.s).map(|((w, r), s)| w * r * s),
                        s.s.len(),
                    )),
                    Err(_) => None,
                };
                (Ok(s), k0)
            }
            Err(Error::Config(m)) => (Err(m), None),
            Err(e) => return Err(e),
        };
        let ev = DesignEvaluator {
            inputs: inp.clone(),
            support,
            kappa0_sq,
        };
        if let Some(k0) = ev.kappa0_sq {
            ev.check_kappas(k0)?;
        }
        Ok(ev)
    }

    fn check_kappas(&self, k0: f64) -> Result<()> {
        let inp = &self.inputs;
        let (s11, s01) = (inp.sigma2_11(), inp.sigma2_01());
        let k1 = inp.gamma1 * k0;
        if k0 > s01 * (1.0 + KAPPA_SLACK) {
            return Err(Error::InvalidInputs(format!(
                "derived kappa0^2 = {k0} exceeds sigma2_01 = {s01}"
            )));
        }
        if k1 > s11 * (1.0 + KAPPA_SLACK) {
            return Err(Error::InvalidInputs(format!(
                "derived kappa1^2 = {k1} exceeds sigma2_11 = {s11}"
            )));
        }
        Ok(())
    }

    fn support(&self) -> Result<&Support> {
        self.support.as_ref().map_err(|m| Error::Config(m.clone()))
    }

    /// `κ₀² = E{r(X)σ²₀,₀(X) | R=1}`.
    pub fn kappa0_sq(&self) -> Result<f64> {
        self.support()?.w1()?;
        Ok(self.kappa0_sq.expect("computed with support"))
    }

    pub fn kappa1_sq(&self) -> Result<f64> {
        Ok(self.inputs.gamma1 * self.kappa0_sq()?)
    }

    /// `(σ²₁,₁−κ₁²) + (σ²₀,₁−κ₀²) − 2γ√[(σ²₁,₁−κ₁²)(σ²₀,₁−κ₀²)]`.
    pub fn term3(&self) -> Result<f64> {
        let k0 = self.kappa0_sq()?;
        let k1 = self.inputs.gamma1 * k0;
        let a = (self.inputs.sigma2_11() - k1).max(0.0);
        let b = (self.inputs.sigma2_01() - k0).max(0.0);
        let t = a + b - 2.0 * self.inputs.gamma * (a * b).sqrt();
        if !(t.is_finite()) {
            return Err(Error::InvalidInputs("term 3 is not finite".into()));
        }
        Ok(t.max(0.0))
    }

    fn sampling_odds(&self, n_r: u64) -> Result<f64> {
        if self.inputs.n_external == 0 {
            return Err(Error::invalid(
                "n_external",
                "must be positive for designs that borrow external controls",
            ));
        }
        Ok(n_r as f64 / self.inputs.n_external as f64)
    }

    /// Terms 1, 2 and 4 of the hybrid variance at propensity `pi` and size
    /// `n_r`, together with term 3. `pi = 1` is allowed.
    pub fn hybrid_terms(&self, pi: f64, n_r: u64, borrowing: Borrowing) -> Result<[f64; 4]> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::invalid("pi_a", format!("{pi} is not in (0, 1]")));
        }
        let sup = self.support()?;
        let w1 = sup.w1()?;
        let k0 = self.kappa0_sq()?;
        let term1 = self.inputs.gamma1 * k0 / pi;
        let term3 = self.term3()?;
        let om = 1.0 - pi;
        let n = sup.s.len();
        let (term2, term4) = match borrowing {
            Borrowing::None => {
                if om <= 0.0 {
                    return Err(Error::invalid(
                        "pi_a",
                        "a design without borrowing needs internal controls",
                    ));
                }
                (k0 / om, 0.0)
            }
            Borrowing::Ratio => {
                let r_r = self.sampling_odds(n_r)?;
                let mut t2 = 0.0;
                let mut t4 = 0.0;
                #[allow(clippy::needless_range_loop)]
                for i in 0..n {
                    let (s, r, d) = (sup.s[i], sup.r[i], sup.d[i]);
                    if r == 0.0 {
                        if om > 0.0 {
                            t2 += w1[i] * r * s / om;
                        }
                        continue;
                    }
                    // ((1−π) + r/q)² rewritten with q² cleared so that q = 0 is finite
                    let q = d * r_r;
                    let den = om * q + r;
                    let den2 = den * den;
                    t2 += w1[i] * om * r * s * q * q / den2;
                    t4 += r * r * s * d * d * r_r / den2;
                }
                (t2 / n as f64, t4 / n as f64)
            }
        };
        Ok([term1, term2, term3, term4])
    }

    /// `E{d²(X)σ²₀,₀(X) | R=0}`.
    pub fn external_moment(&self) -> Result<f64> {
        let sup = self.support()?;
        Ok(Support::mean(
            sup.d.iter().zip(&sup.s).map(|(d, s)| d * d * s),
            sup.s.len(),
        ))
    }

    fn pi_for(&self, method: DesignMethod) -> Result<f64> {
        if method == DesignMethod::SingleArm {
            return Ok(1.0);
        }
        let pi = self.inputs.pi_a;
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::invalid(
                "pi_a",
                format!("{pi} is not in (0, 1) as {method} requires an internal control arm"),
            ));
        }
        Ok(pi)
    }

    pub fn variance(&self, method: DesignMethod, n_r: u64) -> Result<VarianceComponents> {
        let pi = self.pi_for(method)?;
        let inp = &self.inputs;
        let (terms, n_r_used) = match method {
            DesignMethod::DiffInMeans => (
                [inp.sigma2_11() / pi, inp.sigma2_01() / (1.0 - pi), 0.0, 0.0],
                0,
            ),
            DesignMethod::Aipw => (self.hybrid_terms(pi, n_r, Borrowing::None)?, 0),
            DesignMethod::HybridEc => (self.hybrid_terms(pi, n_r, Borrowing::Ratio)?, n_r),
            DesignMethod::SingleArm => {
                let r_r = self.sampling_odds(n_r)?;
                (
                    [
                        self.kappa1_sq()?,
                        0.0,
                        self.term3()?,
                        r_r * self.external_moment()?,
                    ],
                    n_r,
                )
            }
        };
        let total = terms.iter().sum::<f64>();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidInputs(format!(
                "{method} variance {total} is not positive and finite"
            )));
        }
        Ok(VarianceComponents {
            term1: terms[0],
            term2: terms[1],
            term3: terms[2],
            term4: terms[3],
            total,
            method,
            n_r_used,
        })
    }

    pub fn power(&self, method: DesignMethod, spec: &PowerSpec, n_r: u64) -> Result<f64> {
        let v = self.variance(method, n_r)?;
        Ok(power_at(spec.tau, v.total, n_r, spec.alpha))
    }
}

/// Four-term asymptotic variance of `method` at current-study size `n_r`.
pub fn design_variance(
    method: DesignMethod,
    inp: &DesignInputs,
    n_r: u64,
) -> Result<VarianceComponents> {
    DesignEvaluator::new(inp)?.variance(method, n_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    ClosedForm,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub method: DesignMethod,
    pub pi_a: f64,
    pub n_r: u64,
    pub n_t: u64,
    pub n_c: u64,
    pub predicted_power: f64,
    pub target_power: f64,
    pub variance_at_n: VarianceComponents,
    pub solver: Solver,
    pub feasible: bool,
    /// Number of power evaluations performed.
    pub evaluations: u64,
    /// Strict lower bound on `N_E` for single-arm designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_bound: Option<f64>,
    /// Smallest integer `N_E` above [`SampleSizeResult::external_bound`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_external_n: Option<u64>,
}

fn ceil_guarded(x: f64) -> u64 {
    // absorbs representation error on values that are integers in exact arithmetic
    (x * (1.0 - 1e-12)).ceil().max(0.0) as u64
}

/// Smallest `n_r` reaching the target power for `method`.
pub fn required_sample_size(
    method: DesignMethod,
    inp: &DesignInputs,
    spec: &PowerSpec,
    grid_max: u64,
) -> Result<SampleSizeResult> {
    let ev = DesignEvaluator::new(inp)?;
    solve_with(&ev, method, spec, grid_max)
}

/// As [`required_sample_size`], reusing a prepared evaluator.
pub fn solve_with(
    ev: &DesignEvaluator,
    method: DesignMethod,
    spec: &PowerSpec,
    grid_max: u64,
) -> Result<SampleSizeResult> {
    spec.validate_for_sizing()?;
    if grid_max < 2 {
        return Err(Error::invalid("grid_max", "must be at least 2"));
    }
    let pi = ev.pi_for(method)?;
    let inp = &ev.inputs;

    if method == DesignMethod::DiffInMeans {
        let k = spec.k();
        let n_t_exact =
            (inp.sigma2_11() + pi * inp.sigma2_01() / (1.0 - pi)) * k / (spec.tau * spec.tau);
        let n_t = ceil_guarded(n_t_exact);
        // the control arm is sized from the unrounded treated-arm size
        let n_c = ceil_guarded((1.0 - pi) / pi * n_t_exact);
        let n_r = n_t + n_c;
        let v = ev.variance(method, n_r)?;
        return Ok(SampleSizeResult {
            method,
            pi_a: pi,
            n_r,
            n_t,
            n_c,
            predicted_power: power_at(spec.tau, v.total, n_r, spec.alpha),
            target_power: spec.target_power,
            variance_at_n: v,
            solver: Solver::ClosedForm,
            feasible: true,
            evaluations: 1,
            external_bound: None,
            min_external_n: None,
        });
    }

    let infeasible = |evaluations: u64, bound: Option<f64>| -> Result<SampleSizeResult> {
        let v = ev.variance(method, grid_max)?;
        Ok(SampleSizeResult {
            method,
            pi_a: pi,
            n_r: 0,
            n_t: 0,
            n_c: 0,
            predicted_power: power_at(spec.tau, v.total, grid_max, spec.alpha),
            target_power: spec.target_power,
            variance_at_n: v,
            solver: Solver::Grid,
            feasible: false,
            evaluations,
            external_bound: bound,
            min_external_n: bound.map(|b| b.floor() as u64 + 1),
        })
    };

    let mut bound = None;
    if method == DesignMethod::SingleArm {
        let b = sat_bound_with(ev, spec)?;
        if (inp.n_external as f64) <= b {
            return infeasible(0, Some(b));
        }
        bound = Some(b);
    }

    let mut evaluations = 0;
    let mut start = 2;
    while start <= grid_max {
        let end = (start + GRID_CHUNK - 1).min(grid_max);
        let powers: Vec<Result<f64>> = (start..=end)
            .into_par_iter()
            .map(|n| ev.power(method, spec, n))
            .collect();
        for (offset, p) in powers.into_iter().enumerate() {
            evaluations += 1;
            let n = start + offset as u64;
            let p = p?;
            if p >= spec.target_power {
                let n_t = if method == DesignMethod::SingleArm {
                    n
                } else {
                    (n as f64 * pi).round() as u64
                };
                return Ok(SampleSizeResult {
                    method,
                    pi_a: pi,
                    n_r: n,
                    n_t,
                    n_c: n - n_t,
                    predicted_power: p,
                    target_power: spec.target_power,
                    variance_at_n: ev.variance(method, n)?,
                    solver: Solver::Grid,
                    feasible: true,
                    evaluations,
                    external_bound: bound,
                    min_external_n: bound.map(|b| b.floor() as u64 + 1),
                });
            }
        }
        start = end + 1;
    }
    infeasible(evaluations, bound)
}

fn sat_bound_with(ev: &DesignEvaluator, spec: &PowerSpec) -> Result<f64> {
    spec.validate_for_sizing()?;
    Ok(spec.k() / (spec.tau * spec.tau) * ev.external_moment()?)
}

/// Strict lower bound on `N_E` for a single-arm design to be able to reach
/// the target power: `(K/τ²)·E{d²(X)σ²₀,₀(X) | R=0}`.
pub fn sat_min_external_n(inp: &DesignInputs, spec: &PowerSpec) -> Result<f64> {
    sat_bound_with(&DesignEvaluator::new(inp)?, spec)
}

/// Closed-form single-arm size `⌈K·V₂·N_E / (N_E − E₃K)⌉`, where `V₂` is the
/// `N_R`-free part of the variance over `τ²` and `E₃` the external moment
/// over `τ²`. `None` when the feasibility condition fails.
pub fn sat_closed_form(inp: &DesignInputs, spec: &PowerSpec) -> Result<Option<u64>> {
    let ev = DesignEvaluator::new(inp)?;
    spec.validate_for_sizing()?;
    let t2 = spec.tau * spec.tau;
    let v2 = (ev.kappa1_sq()? + ev.term3()?) / t2;
    let e3 = ev.external_moment()? / t2;
    let k = spec.k();
    let ne = inp.n_external as f64;
    if ne <= e3 * k {
        return Ok(None);
    }
    Ok(Some((k * v2 * ne / (ne - e3 * k)).ceil() as u64))
}

/// One point of a power curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_r: u64,
    pub power: f64,
    pub variance: f64,
}

pub fn power_curve(
    method: DesignMethod,
    ev: &DesignEvaluator,
    spec: &PowerSpec,
    n_values: &[u64],
) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    if n_values.is_empty() {
        return Err(Error::invalid("n_r", "range is empty"));
    }
    n_values
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::invalid("n_r", "sizes must be positive"));
            }
            let v = ev.variance(method, n)?.total;
            Ok(CurvePoint {
                n_r: n,
                power: power_at(spec.tau, v, n, spec.alpha),
                variance: v,
            })
        })
        .collect()
}

fn marginal_and_residual_variance(ec: &TrialDataset) -> (f64, f64) {
    let n = ec.records.len() as f64;
    let mean = ec.records.iter().map(|r| r.y).sum::<f64>() / n;
    let marginal = ec.records.iter().map(|r| (r.y - mean).powi(2)).sum::<f64>() / n;
    let refs: Vec<&SubjectRecord> = ec.records.iter().collect();
    let fitted = if ec.records.len() > ec.p + 1 {
        fit_linear_mean(&refs, ec.p, true).ok()
    } else {
        None
    };
    let residual = match fitted {
        Some(beta) => {
            ec.records
                .iter()
                .map(|r| (r.y - linear_predict(&beta, &r.x)).powi(2))
                .sum::<f64>()
                / n
        }
        // too few points for the covariate model: intercept only
        None => marginal,
    };
    (marginal, residual.min(marginal))
}

/// Builds complete design inputs from an external-control sample, filling
/// every field not in `overrides` with its default: marginal and residual
/// variances from the sample, unit variance ratios, `r ≡ 1`, `d ≡ 1`,
/// `γ₁ = γ = 1`. The sample is attached as integration support.
pub fn pre_experimental_inputs(
    ec: &TrialDataset,
    overrides: &DesignOverrides,
) -> Result<DesignInputs> {
    if ec.records.iter().any(|r| r.r != 0) {
        return Err(Error::invalid(
            "ec_sample",
            "contains current-study (r = 1) rows",
        ));
    }
    if ec.records.len() < 2 {
        return Err(Error::invalid(
            "ec_sample",
            "needs at least 2 external records",
        ));
    }
    if ec.records.iter().any(|r| r.x.len() != ec.p) {
        return Err(Error::invalid(
            "ec_sample",
            "records differ in covariate width",
        ));
    }
    let (marginal, residual) = marginal_and_residual_variance(ec);
    let o = overrides.clone();
    let inputs = DesignInputs {
        tau: o.tau.ok_or_else(|| Error::MissingField("tau".into()))?,
        alpha: o.alpha.unwrap_or(0.05),
        beta: o.beta.unwrap_or(0.2),
        pi_a: o.pi_a.unwrap_or(0.5),
        n_external: o.n_external.unwrap_or(ec.records.len() as u64),
        sigma2_00: o.sigma2_00.unwrap_or(marginal),
        sigma2_00_x: o.sigma2_00_x.unwrap_or(FunctionSpec::constant(residual)),
        r1_m: o.r1_m.unwrap_or(1.0),
        r0_m: o.r0_m.unwrap_or(1.0),
        gamma1: o.gamma1.unwrap_or(1.0),
        gamma: o.gamma.unwrap_or(1.0),
        r_fn: o.r_fn.unwrap_or(FunctionSpec::constant(1.0)),
        d_fn: o.d_fn.unwrap_or(FunctionSpec::constant(1.0)),
        ec_sample: Some(ec.clone()),
        covariate_model: o.covariate_model,
    };
    inputs.validate()?;
    Ok(inputs)
}

/// Complete inputs from a document: runs the pre-experimental procedure when
/// an EC sample is attached, otherwise requires every field.
pub fn resolve_inputs(overrides: &DesignOverrides) -> Result<DesignInputs> {
    match &overrides.ec_sample {
        Some(ec) => pre_experimental_inputs(ec, overrides),
        None => overrides.clone().into_inputs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sufficient_oracle() -> DesignInputs {
        DesignInputs {
            tau: 0.4,
            alpha: 0.05,
            beta: 0.2,
            pi_a: 0.5,
            n_external: 1000,
            sigma2_00: 1.5,
            sigma2_00_x: FunctionSpec::constant(1.0),
            r1_m: 1.3 / 1.5,
            r0_m: 1.3 / 1.5,
            gamma1: 1.0,
            gamma: 1.0,
            r_fn: FunctionSpec::constant(0.8),
            d_fn: FunctionSpec::constant(1.0),
            ec_sample: None,
            covariate_model: None,
        }
    }

    fn spec() -> PowerSpec {
        PowerSpec {
            tau: 0.4,
            alpha: 0.05,
            target_power: 0.8,
        }
    }

    #[test]
    fn power_examples() {
        assert!((power_at(0.0, 3.0, 50, 0.05) - 0.05).abs() < 1e-9);
        assert!((power_at(0.4, 5.2, 256, 0.05) - 0.8013).abs() < 5e-4);
        assert!(power_at(10.0, 5.2, 256, 0.05) > 0.9999);
    }

    #[test]
    fn k_factor_value() {
        assert!((k_factor(0.05, 0.8) - 7.8489).abs() < 1e-4);
    }

    #[test]
    fn hybrid_hand_value() {
        let v = design_variance(DesignMethod::HybridEc, &sufficient_oracle(), 83).unwrap();
        // hand evaluation with q = 0.083, r = 0.8
        let q = 0.083;
        let den: f64 = 0.5 + 0.8 / q;
        let t2 = 0.5 * 0.8 / (den * den);
        let t4 = (0.64 / q) / (den * den);
        assert!((v.term1 - 1.6).abs() < 1e-12);
        assert!((v.term2 - t2).abs() < 1e-12);
        assert!(v.term3.abs() < 1e-12);
        assert!((v.term4 - t4).abs() < 1e-12);
        assert!((v.total - 1.679).abs() < 0.002, "{}", v.total);
        assert_eq!(v.n_r_used, 83);
    }

    #[test]
    fn aipw_degenerates_to_std() {
        let mut inp = sufficient_oracle();
        inp.r_fn = FunctionSpec::constant(1.3);
        let aipw = design_variance(DesignMethod::Aipw, &inp, 10).unwrap();
        let dim = design_variance(DesignMethod::DiffInMeans, &inp, 10).unwrap();
        assert!((aipw.total - dim.total).abs() < 1e-12 * dim.total);
        assert!((dim.total - 5.2).abs() < 1e-12);
        assert_eq!(aipw.term4, 0.0);
        assert_eq!(aipw.n_r_used, 0);
    }

    #[test]
    fn single_arm_value() {
        let v = design_variance(DesignMethod::SingleArm, &sufficient_oracle(), 42).unwrap();
        assert!((v.total - 0.842).abs() < 1e-12);
        assert_eq!(v.term2, 0.0);
    }

    #[test]
    fn single_arm_is_hybrid_at_unit_propensity() {
        let ev = DesignEvaluator::new(&sufficient_oracle()).unwrap();
        let h = ev.hybrid_terms(1.0, 42, Borrowing::Ratio).unwrap();
        let s = ev.variance(DesignMethod::SingleArm, 42).unwrap();
        assert_eq!(h[1], 0.0);
        let total: f64 = h.iter().sum();
        assert!((total - s.total).abs() < 1e-12 * s.total);
    }

    #[test]
    fn no_borrowing_is_aipw() {
        let ev = DesignEvaluator::new(&sufficient_oracle()).unwrap();
        let h: f64 = ev
            .hybrid_terms(0.5, 83, Borrowing::None)
            .unwrap()
            .iter()
            .sum();
        let a = ev.variance(DesignMethod::Aipw, 83).unwrap().total;
        assert!((h - a).abs() < 1e-12 * a);
        assert!((a - (1.6 + 1.6 + 2.0 * 0.5 - 2.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn table2_first_row() {
        let inp = sufficient_oracle();
        let want = [
            (DesignMethod::DiffInMeans, 256),
            (DesignMethod::Aipw, 157),
            (DesignMethod::HybridEc, 83),
            (DesignMethod::SingleArm, 42),
        ];
        for (m, n) in want {
            let r = required_sample_size(m, &inp, &spec(), DEFAULT_GRID_MAX).unwrap();
            assert_eq!(r.n_r, n, "{m}");
            assert_eq!(r.n_t + r.n_c, r.n_r);
            assert!(r.predicted_power >= 0.8);
        }
        let dim = required_sample_size(DesignMethod::DiffInMeans, &inp, &spec(), 100).unwrap();
        assert_eq!((dim.n_t, dim.n_c), (128, 128));
    }

    #[test]
    fn diff_in_means_row() {
        let mut inp = sufficient_oracle();
        let mut got = Vec::new();
        for pi in [0.5, 0.6, 0.7, 0.8, 0.9] {
            inp.pi_a = pi;
            got.push(required_sample_size(DesignMethod::DiffInMeans, &inp, &spec(), 100).unwrap());
        }
        let n: Vec<u64> = got.iter().map(|r| r.n_r).collect();
        assert_eq!(n, vec![256, 267, 305, 399, 709]);
        assert_eq!((got[4].n_t, got[4].n_c), (638, 71));
    }

    #[test]
    fn grid_minimality() {
        let inp = sufficient_oracle();
        let ev = DesignEvaluator::new(&inp).unwrap();
        for m in [
            DesignMethod::Aipw,
            DesignMethod::HybridEc,
            DesignMethod::SingleArm,
        ] {
            let r = solve_with(&ev, m, &spec(), DEFAULT_GRID_MAX).unwrap();
            assert_eq!(r.solver, Solver::Grid);
            assert!(ev.power(m, &spec(), r.n_r - 1).unwrap() < 0.8);
        }
    }

    #[test]
    fn sat_bounds() {
        let inp = sufficient_oracle();
        let b = sat_min_external_n(&inp, &spec()).unwrap();
        assert!((b - 7.8489 / 0.16).abs() < 1e-3, "{b}");
        let mut zero = inp.clone();
        zero.d_fn = FunctionSpec::constant(0.0);
        assert_eq!(sat_min_external_n(&zero, &spec()).unwrap(), 0.0);
        let mut twice = inp.clone();
        twice.d_fn = FunctionSpec::constant(2.0);
        let b2 = sat_min_external_n(&twice, &spec()).unwrap();
        assert!((b2 - 4.0 * b).abs() < 1e-9);
    }

    #[test]
    fn single_arm_infeasible_reports_min_external() {
        let mut inp = sufficient_oracle();
        inp.n_external = 40;
        let r =
            required_sample_size(DesignMethod::SingleArm, &inp, &spec(), DEFAULT_GRID_MAX).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.min_external_n, Some(50));
        assert_eq!(r.n_r, 0);
    }

    #[test]
    fn sat_grid_matches_closed_form() {
        let inp = sufficient_oracle();
        let grid =
            required_sample_size(DesignMethod::SingleArm, &inp, &spec(), DEFAULT_GRID_MAX).unwrap();
        assert_eq!(Some(grid.n_r), sat_closed_form(&inp, &spec()).unwrap());
    }

    #[test]
    fn hybrid_needs_internal_controls() {
        let mut inp = sufficient_oracle();
        inp.pi_a = 1.0;
        assert!(matches!(
            design_variance(DesignMethod::HybridEc, &inp, 10),
            Err(Error::InvalidField { .. })
        ));
    }

    #[test]
    fn kappa_above_sigma_is_invalid() {
        let mut inp = sufficient_oracle();
        inp.r_fn = FunctionSpec::constant(2.0);
        assert!(matches!(
            DesignEvaluator::new(&inp),
            Err(Error::InvalidInputs(_))
        ));
    }

    #[test]
    fn missing_support_is_config_error() {
        let mut inp = sufficient_oracle();
        inp.d_fn = FunctionSpec::log_linear(vec![0.0, 0.5]);
        let ev = DesignEvaluator::new(&inp).unwrap();
        // the randomized designs without covariate integration still work
        assert!(ev.variance(DesignMethod::DiffInMeans, 10).is_ok());
        assert!(matches!(
            ev.variance(DesignMethod::HybridEc, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_effect_cannot_be_sized() {
        let mut s = spec();
        s.tau = 0.0;
        assert!(
            required_sample_size(DesignMethod::HybridEc, &sufficient_oracle(), &s, 100).is_err()
        );
    }

    #[test]
    fn two_point_ec_sample() {
        let ec = TrialDataset::new(
            1,
            vec![
                SubjectRecord::new(vec![0.3], 0, 0, 1.0),
                SubjectRecord::new(vec![-0.2], 0, 0, 1.4),
            ],
        );
        let o = DesignOverrides {
            tau: Some(0.4),
            ..Default::default()
        };
        let inp = pre_experimental_inputs(&ec, &o).unwrap();
        assert!((inp.sigma2_00 - 0.04).abs() < 1e-12);
        assert_eq!(inp.sigma2_00_x, FunctionSpec::constant(inp.sigma2_00));
        assert_eq!(inp.n_external, 2);
    }

    #[test]
    fn pre_experimental_rejects_current_rows() {
        let ec = TrialDataset::new(0, vec![SubjectRecord::new(vec![], 1, 0, 1.0); 3]);
        let o = DesignOverrides {
            tau: Some(0.4),
            ..Default::default()
        };
        assert!(pre_experimental_inputs(&ec, &o).is_err());
    }

    #[test]
    fn power_curve_rejects_empty_range() {
        let ev = DesignEvaluator::new(&sufficient_oracle()).unwrap();
        assert!(power_curve(DesignMethod::HybridEc, &ev, &spec(), &[]).is_err());
        let c = power_curve(DesignMethod::HybridEc, &ev, &spec(), &[42, 83, 166]).unwrap();
        assert!(c[0].power < c[1].power && c[1].power < c[2].power);
        assert!((c[1].power - 0.80).abs() < 0.01);
    }
}
