//! Data-generating processes, Monte Carlo rejection-rate studies, size-table
//! reproduction and bootstrap trial emulation.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, replication index)` and results are aggregated in index order, so
//! reports do not depend on the number of worker threads.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    pre_experimental_inputs, solve_with, DesignEvaluator, PowerSpec, DEFAULT_GRID_MAX,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate_effect, wald_test, EstimateResult};
use crate::model::{
    CovariateColumn, CovariateModel, DesignInputs, DesignMethod, DesignOverrides, FunctionSpec,
    SubjectRecord, TrialDataset,
};
use crate::nuisance::{fit_nuisance, NuisanceOptions, PropensityMode};

/// Draws used for integration when oracle inputs need a covariate model.
pub const ORACLE_DRAWS: usize = 200_000;
const ORACLE_SEED: u64 = 20_250_101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MainSufficient,
    MainInsufficient,
    Heterogeneous,
    Heteroscedastic,
    Custom,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "main_sufficient" | "sufficient" => Ok(Scenario::MainSufficient),
            "main_insufficient" | "insufficient" => Ok(Scenario::MainInsufficient),
            "heterogeneous" => Ok(Scenario::Heterogeneous),
            "heteroscedastic" => Ok(Scenario::Heteroscedastic),
            "custom" => Ok(Scenario::Custom),
            _ => Err(Error::invalid(
                "scenario",
                format!("unknown scenario `{s}`"),
            )),
        }
    }
}

/// How the second parameter of the shifted EC covariate distribution is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    #[default]
    Variance,
    StdDev,
}

/// Linear-Gaussian outcome model with independent covariates, used by the
/// custom scenario. Variances, not standard deviations, throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomDgp {
    /// Intercept, X₁ and X₂ coefficients.
    pub beta: [f64; 3],
    pub noise_var_current: f64,
    pub noise_var_external: f64,
    pub x1_current: (f64, f64),
    pub x2_current: f64,
    pub x1_external: (f64, f64),
    pub x2_external: f64,
}

impl Default for CustomDgp {
    fn default() -> Self {
        CustomDgp {
            beta: [1.0, 0.5, -1.0],
            noise_var_current: 0.8,
            noise_var_external: 1.0,
            x1_current: (1.0, 1.0),
            x2_current: 0.5,
            x1_external: (1.0, 1.0),
            x2_external: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub tau: f64,
    /// Heterogeneous effect coefficients on `A·X₁` and `A·X₂`.
    #[serde(default)]
    pub tau1: f64,
    #[serde(default)]
    pub tau2: f64,
    pub pi_a: f64,
    pub n_r: usize,
    pub n_e: usize,
    pub seed: u64,
    #[serde(default)]
    pub scale: ScaleConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomDgp>,
}

impl ScenarioSpec {
    /// For the heterogeneous scenario `tau` is split as `τ₁ = 0.75τ`,
    /// `τ₂ = 0.5τ`, which gives the population effect `τ₁ + 0.5τ₂ = τ`.
    pub fn new(scenario: Scenario, tau: f64, pi_a: f64, n_r: usize, n_e: usize, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            tau,
            tau1: 0.75 * tau,
            tau2: 0.5 * tau,
            pi_a,
            n_r,
            n_e,
            seed,
            scale: ScaleConvention::Variance,
            custom: (scenario == Scenario::Custom).then(CustomDgp::default),
        }
    }

    /// Average treatment effect in the current-study population.
    pub fn population_tau(&self) -> f64 {
        match self.scenario {
            Scenario::Heterogeneous => self.tau1 + 0.5 * self.tau2,
            _ => self.tau,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.pi_a > 0.0 && self.pi_a <= 1.0) {
            return Err(Error::invalid(
                "pi_a",
                format!("{} is not in (0, 1]", self.pi_a),
            ));
        }
        if self.scenario == Scenario::Custom && self.custom.is_none() {
            return Err(Error::Config(
                "custom scenario without a custom outcome model".into(),
            ));
        }
        Ok(())
    }
}

fn normal(mean: f64, var: f64) -> Normal<f64> {
    Normal::new(mean, var.sqrt()).expect("finite normal parameters")
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_dataset(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> TrialDataset {
    let main = CustomDgp::default();
    let dgp = spec.custom.as_ref().unwrap_or(&main);
    let (x1_ext, x2_ext) = match spec.scenario {
        Scenario::MainInsufficient => {
            let var = match spec.scale {
                ScaleConvention::Variance => 1.5,
                ScaleConvention::StdDev => 1.5 * 1.5,
            };
            ((1.2, var), 0.7)
        }
        _ => (dgp.x1_external, dgp.x2_external),
    };
    let [b0, b1, b2] = dgp.beta;
    let eps_r = normal(0.0, dgp.noise_var_current);
    let eps_e = normal(0.0, dgp.noise_var_external);
    let x1_r = normal(dgp.x1_current.0, dgp.x1_current.1);
    let x1_e = normal(x1_ext.0, x1_ext.1);

    let n_t = (spec.n_r as f64 * spec.pi_a).round() as usize;
    let mut arms: Vec<u8> = (0..spec.n_r).map(|i| u8::from(i < n_t)).collect();
    arms.shuffle(rng);

    let mut records = Vec::with_capacity(spec.n_r + spec.n_e);
    for a in arms {
        let x1 = x1_r.sample(rng);
        let x2 = f64::from(u8::from(rng.random_bool(dgp.x2_current)));
        let e = eps_r.sample(rng);
        let af = f64::from(a);
        let mean = b0 + b1 * x1 + b2 * x2;
        let y = match spec.scenario {
            Scenario::Heterogeneous => mean + spec.tau1 * af * x1 + spec.tau2 * af * x2 + e,
            Scenario::Heteroscedastic => mean + spec.tau * af + 0.8 * x1 * e,
            _ => mean + spec.tau * af + e,
        };
        records.push(SubjectRecord::new(vec![x1, x2], 1, a, y));
    }
    for _ in 0..spec.n_e {
        let x1 = x1_e.sample(rng);
        let x2 = f64::from(u8::from(rng.random_bool(x2_ext)));
        let e = eps_e.sample(rng);
        let mean = b0 + b1 * x1 + b2 * x2;
        let y = match spec.scenario {
            Scenario::Heteroscedastic => mean + 0.4 * x1 * x1 * e,
            _ => mean + e,
        };
        records.push(SubjectRecord::new(vec![x1, x2], 0, 0, y));
    }
    TrialDataset::new(2, records)
}

/// Draws one dataset: `n_r` current-study rows with exactly
/// `round(n_r·π_A)` treated (shuffled), then `n_e` external controls.
pub fn generate_scenario_dataset(spec: &ScenarioSpec) -> Result<TrialDataset> {
    generate_replicate(spec, 0)
}

/// The dataset of replication `index` under `spec.seed`.
pub fn generate_replicate(spec: &ScenarioSpec, index: u64) -> Result<TrialDataset> {
    spec.validate()?;
    Ok(draw_dataset(spec, &mut stream_rng(spec.seed, index)))
}

/// Per-replication outcome in a study log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_hat: Option<f64>,
    pub reject: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub reference: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub method: DesignMethod,
    pub n_r: usize,
    pub tau: f64,
    pub replications: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub mean_tau_hat: f64,
    /// Sample variance of `τ̂` across successful replications.
    pub var_tau_hat: f64,
    pub mean_v_hat: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coverage: Vec<Coverage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<ReplicationRecord>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub alpha: f64,
    pub nuisance: NuisanceOptions,
    /// Replace the fitted `μ̂₀` by zero coefficients (double-robustness check).
    pub zero_mu0: bool,
    pub keep_log: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            alpha: 0.05,
            nuisance: NuisanceOptions::default(),
            zero_mu0: false,
            keep_log: false,
        }
    }
}

fn estimate_once(
    method: DesignMethod,
    d: &TrialDataset,
    opts: &StudyOptions,
) -> Result<EstimateResult> {
    let mut fit = fit_nuisance(method, d, &opts.nuisance)?;
    if opts.zero_mu0 {
        fit.mu0.iter_mut().for_each(|c| *c = 0.0);
    }
    Ok(wald_test(estimate_effect(method, d, &fit)?, opts.alpha))
}

fn aggregate(
    method: DesignMethod,
    n_r: usize,
    tau: f64,
    outcomes: Vec<Result<EstimateResult>>,
    references: &[f64],
    keep_log: bool,
) -> Result<StudyReport> {
    let replications = outcomes.len();
    let ok: Vec<&EstimateResult> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    if ok.is_empty() {
        let first = outcomes
            .into_iter()
            .find_map(|o| o.err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::NonFinite(format!(
            "every replication failed; first error: {first}"
        )));
    }
    let n = ok.len() as f64;
    let rate = ok.iter().filter(|r| r.reject).count() as f64 / n;
    let mean_tau = ok.iter().map(|r| r.tau_hat).sum::<f64>() / n;
    let var_tau = if ok.len() > 1 {
        ok.iter()
            .map(|r| (r.tau_hat - mean_tau).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let coverage = references
        .iter()
        .map(|&reference| Coverage {
            reference,
            rate: ok
                .iter()
                .filter(|r| r.ci_low <= reference && reference <= r.ci_high)
                .count() as f64
                / n,
        })
        .collect();
    let log = keep_log.then(|| {
        outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| match o {
                Ok(r) => ReplicationRecord {
                    index: i as u64,
                    tau_hat: Some(r.tau_hat),
                    v_hat: Some(r.v_hat),
                    reject: r.reject,
                    error: None,
                },
                Err(e) => ReplicationRecord {
                    index: i as u64,
                    tau_hat: None,
                    v_hat: None,
                    reject: false,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    Ok(StudyReport {
        method,
        n_r,
        tau,
        replications,
        failures: replications - ok.len(),
        rejection_rate: rate,
        mc_se: (rate * (1.0 - rate) / n).sqrt(),
        mean_tau_hat: mean_tau,
        var_tau_hat: var_tau,
        mean_v_hat: ok.iter().map(|r| r.v_hat).sum::<f64>() / n,
        coverage,
        log,
    })
}

/// Generate, fit, estimate and test `reps` times. Single-arm studies always
/// generate with `π_A = 1`.
pub fn monte_carlo_study(
    spec: &ScenarioSpec,
    method: DesignMethod,
    reps: usize,
    opts: &StudyOptions,
) -> Result<StudyReport> {
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    let mut spec = spec.clone();
    if method == DesignMethod::SingleArm {
        spec.pi_a = 1.0;
    }
    spec.validate()?;
    let outcomes: Vec<Result<EstimateResult>> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let d = draw_dataset(&spec, &mut stream_rng(spec.seed, i));
            estimate_once(method, &d, opts)
        })
        .collect();
    aggregate(
        method,
        spec.n_r,
        spec.population_tau(),
        outcomes,
        &[],
        opts.keep_log,
    )
}

/// Rejection rate with the randomization probability treated as known.
pub fn monte_carlo_rejection_rate(
    spec: &ScenarioSpec,
    method: DesignMethod,
    reps: usize,
    alpha: f64,
) -> Result<StudyReport> {
    let opts = StudyOptions {
        alpha,
        nuisance: NuisanceOptions {
            propensity: PropensityMode::Known(spec.pi_a),
            ..NuisanceOptions::default()
        },
        ..StudyOptions::default()
    };
    monte_carlo_study(spec, method, reps, &opts)
}

/// Oracle design inputs of a built-in scenario at `n_external`.
pub fn oracle_inputs(scenario: Scenario, tau: f64, n_external: u64) -> Result<DesignInputs> {
    let base = DesignInputs {
        tau,
        alpha: 0.05,
        beta: 0.2,
        pi_a: 0.5,
        n_external,
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
    };
    Ok(match scenario {
        Scenario::MainSufficient => base,
        Scenario::MainInsufficient => {
            // log density ratio of N(1,1)×Bern(0.5) over N(1.2,1.5)×Bern(0.7)
            // in the features (x1, x2, x1²)
            let c0 = 0.5 * 1.5f64.ln() - 0.02 + (5.0f64 / 3.0).ln();
            DesignInputs {
                sigma2_00: 1.585,
                r1_m: 1.3 / 1.585,
                r0_m: 1.3 / 1.585,
                d_fn: FunctionSpec::log_linear(vec![c0, 0.2, (3.0f64 / 7.0).ln(), -1.0 / 6.0]),
                covariate_model: Some(CovariateModel {
                    columns: vec![
                        CovariateColumn::Normal {
                            mean: 1.2,
                            variance: 1.5,
                        },
                        CovariateColumn::Bernoulli { p: 0.7 },
                        CovariateColumn::Square { of: 0 },
                    ],
                    draws: ORACLE_DRAWS,
                    seed: ORACLE_SEED,
                }),
                ..base
            }
        }
        Scenario::Heterogeneous => DesignInputs {
            r1_m: 1.6 / 1.5,
            gamma: 0.6 / 0.4f64.sqrt(),
            ..base
        },
        Scenario::Heteroscedastic => DesignInputs {
            sigma2_00: 2.1,
            r1_m: 1.524 / 2.1,
            r0_m: 1.524 / 2.1,
            // features (x1, x2, ln|x1|)
            sigma2_00_x: FunctionSpec::log_linear(vec![0.16f64.ln(), 0.0, 0.0, 4.0]),
            r_fn: FunctionSpec::log_linear(vec![3.2f64.ln(), 0.0, 0.0, -2.0]),
            covariate_model: Some(CovariateModel {
                columns: vec![
                    CovariateColumn::Normal {
                        mean: 1.0,
                        variance: 1.0,
                    },
                    CovariateColumn::Bernoulli { p: 0.5 },
                    CovariateColumn::LogAbs { of: 0 },
                ],
                draws: ORACLE_DRAWS,
                seed: ORACLE_SEED,
            }),
            ..base
        },
        Scenario::Custom => {
            return Err(Error::Config(
                "custom scenarios have no oracle inputs".into(),
            ));
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizingMode {
    True,
    NonInformative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub method: DesignMethod,
    pub pi_a: f64,
    /// Mean required size across EC regenerations (the size itself in TRUE mode).
    pub mean_n_r: f64,
    pub ceil_n_r: u64,
    /// Regenerations for which the design was infeasible.
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub scenario: Scenario,
    pub mode: SizingMode,
    pub ec_reps: usize,
    pub rows: Vec<SizeRow>,
}

impl SizeTable {
    pub fn get(&self, method: DesignMethod, pi_a: f64) -> Option<&SizeRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.pi_a - pi_a).abs() < 1e-12)
    }
}

fn sizes_for(
    ev: &DesignEvaluator,
    methods: &[DesignMethod],
    pi_list: &[f64],
) -> Result<Vec<(DesignMethod, f64, Option<u64>)>> {
    let spec = PowerSpec::from_inputs(&ev.inputs);
    let mut out = Vec::new();
    for &m in methods {
        for &pi in pi_list {
            let mut e = ev.clone();
            e.inputs.pi_a = pi;
            let r = solve_with(&e, m, &spec, DEFAULT_GRID_MAX)?;
            out.push((m, pi, r.feasible.then_some(r.n_r)));
        }
    }
    Ok(out)
}

/// Required sizes per method and `π_A`, from oracle inputs (TRUE) or from
/// the default pre-experimental inputs averaged over `ec_reps` regenerated
/// EC samples (NON_INFORMATIVE).
pub fn reproduce_required_sizes(
    spec: &ScenarioSpec,
    methods: &[DesignMethod],
    pi_list: &[f64],
    mode: SizingMode,
    ec_reps: usize,
) -> Result<SizeTable> {
    let per_rep: Vec<Vec<(DesignMethod, f64, Option<u64>)>> = match mode {
        SizingMode::True => {
            let inp = oracle_inputs(spec.scenario, spec.tau, spec.n_e as u64)?;
            vec![sizes_for(&DesignEvaluator::new(&inp)?, methods, pi_list)?]
        }
        SizingMode::NonInformative => {
            if ec_reps == 0 {
                return Err(Error::invalid("ec_reps", "must be at least 1"));
            }
            let ec_spec = ScenarioSpec {
                n_r: 0,
                ..spec.clone()
            };
            ec_spec.validate()?;
            (0..ec_reps as u64)
                .into_par_iter()
                .map(|i| {
                    let ec = draw_dataset(&ec_spec, &mut stream_rng(spec.seed, i));
                    let overrides = DesignOverrides {
                        tau: Some(spec.tau),
                        alpha: Some(0.05),
                        beta: Some(0.2),
                        ..Default::default()
                    };
                    let inp = pre_experimental_inputs(&ec, &overrides)?;
                    sizes_for(&DesignEvaluator::new(&inp)?, methods, pi_list)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let reps = per_rep.len();
    let rows = (0..per_rep[0].len())
        .map(|j| {
            let (method, pi_a, _) = per_rep[0][j];
            let sizes: Vec<u64> = per_rep.iter().filter_map(|r| r[j].2).collect();
            let mean = if sizes.is_empty() {
                f64::NAN
            } else {
                sizes.iter().sum::<u64>() as f64 / sizes.len() as f64
            };
            SizeRow {
                method,
                pi_a,
                mean_n_r: mean,
                ceil_n_r: if mean.is_finite() {
                    mean.ceil() as u64
                } else {
                    0
                },
                infeasible: reps - sizes.len(),
            }
        })
        .collect();
    Ok(SizeTable {
        scenario: spec.scenario,
        mode,
        ec_reps: reps,
        rows,
    })
}

/// Resamples `n_r` current-study rows with replacement from `source` (treated
/// rows only for the single-arm design), pairs them with `ec` when the method
/// borrows, estimates, and records CI coverage of each reference value.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_emulation(
    source: &TrialDataset,
    ec: &TrialDataset,
    method: DesignMethod,
    n_r: usize,
    reps: usize,
    alpha: f64,
    references: &[f64],
    seed: u64,
) -> Result<StudyReport> {
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    if ec.records.iter().any(|r| r.r != 0) {
        return Err(Error::invalid("ec", "contains current-study rows"));
    }
    if ec.p != source.p {
        return Err(Error::invalid(
            "ec",
            "covariate width differs from the source",
        ));
    }
    let pool: Vec<&SubjectRecord> = source
        .records
        .iter()
        .filter(|r| {
            if method == DesignMethod::SingleArm {
                r.is_treated()
            } else {
                r.is_current()
            }
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyArm(
            "source has no current-study rows to resample".into(),
        ));
    }
    let opts = StudyOptions {
        alpha,
        nuisance: NuisanceOptions {
            propensity: PropensityMode::Empirical,
            ..NuisanceOptions::default()
        },
        ..StudyOptions::default()
    };
    let outcomes: Vec<Result<EstimateResult>> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut records: Vec<SubjectRecord> = (0..n_r)
                .map(|_| pool[rng.random_range(0..pool.len())].clone())
                .collect();
            if method.uses_external() {
                records.extend(ec.records.iter().cloned());
            }
            estimate_once(method, &TrialDataset::new(source.p, records), &opts)
        })
        .collect();
    aggregate(method, n_r, f64::NAN, outcomes, references, false)
}

/// One row per report: `method,n_r,tau,rejection_rate,mc_se,...`.
pub fn write_study_csv<W: Write>(reports: &[StudyReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "n_r",
        "tau",
        "rejection_rate",
        "mc_se",
        "replications",
        "failures",
        "mean_tau_hat",
        "mean_v_hat",
    ])?;
    for r in reports {
        w.write_record([
            r.method.name().to_string(),
            r.n_r.to_string(),
            // bootstrap emulation has no true effect
            if r.tau.is_finite() {
                r.tau.to_string()
            } else {
                String::new()
            },
            r.rejection_rate.to_string(),
            r.mc_se.to_string(),
            r.replications.to_string(),
            r.failures.to_string(),
            r.mean_tau_hat.to_string(),
            r.mean_v_hat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_size_table_csv<W: Write>(table: &SizeTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "pi_a", "mean_n_r", "ceil_n_r", "infeasible"])?;
    for r in &table.rows {
        w.write_record([
            r.method.name().to_string(),
            r.pi_a.to_string(),
            r.mean_n_r.to_string(),
            r.ceil_n_r.to_string(),
            r.infeasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
