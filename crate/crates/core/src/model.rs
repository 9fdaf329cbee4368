//! Domain vocabulary shared by the estimation, design and simulation layers.
//!
//! A [`TrialDataset`] holds one [`SubjectRecord`] per subject from either the
//! current study (`r = 1`) or the external-control source (`r = 0`).
//! [`DesignInputs`] carries the population-level quantities that parameterize
//! the asymptotic variance at the design stage.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariates, data source, arm and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub x: Vec<f64>,
    /// 1 = current study, 0 = external control source.
    pub r: u8,
    /// 1 = treatment, 0 = control.
    pub a: u8,
    pub y: f64,
}

impl SubjectRecord {
    pub fn new(x: Vec<f64>, r: u8, a: u8, y: f64) -> Self {
        SubjectRecord { x, r, a, y }
    }

    pub fn is_current(&self) -> bool {
        self.r == 1
    }

    pub fn is_treated(&self) -> bool {
        self.r == 1 && self.a == 1
    }

    pub fn is_internal_control(&self) -> bool {
        self.r == 1 && self.a == 0
    }

    pub fn is_external(&self) -> bool {
        self.r == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    /// Covariate dimension shared by every record.
    pub p: usize,
    pub records: Vec<SubjectRecord>,
}

/// Subject counts by source and arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_r: usize,
    pub n_e: usize,
    pub n_t: usize,
    pub n_c: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.n_r + self.n_e
    }

    /// Marginal sampling odds `N_R / N_E`.
    pub fn sampling_odds(&self) -> Result<f64> {
        if self.n_e == 0 {
            return Err(Error::DivisionByZero(
                "sampling odds N_R/N_E requested with no external records".into(),
            ));
        }
        Ok(self.n_r as f64 / self.n_e as f64)
    }
}

/// A single problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoRecords,
    DimensionMismatch {
        record: usize,
        expected: usize,
        found: usize,
    },
    ExternalTreated {
        record: usize,
    },
    InvalidIndicator {
        record: usize,
    },
    NonFinite {
        record: usize,
    },
    EmptyTreatedArm,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoRecords => write!(f, "no records"),
            Violation::DimensionMismatch {
                record,
                expected,
                found,
            } => write!(
                f,
                "record {record}: covariate dimension {found} does not match {expected}"
            ),
            Violation::ExternalTreated { record } => {
                write!(f, "record {record}: external subject assigned treatment")
            }
            Violation::InvalidIndicator { record } => {
                write!(f, "record {record}: indicators r and a must be 0 or 1")
            }
            Violation::NonFinite { record } => write!(f, "record {record}: non-finite value"),
            Violation::EmptyTreatedArm => {
                write!(f, "empty arm: current study has no treated subjects")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub counts: Counts,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Counts> {
        if self.violations.is_empty() {
            Ok(self.counts)
        } else {
            Err(Error::Validation(self.violations))
        }
    }
}

impl TrialDataset {
    pub fn new(p: usize, records: Vec<SubjectRecord>) -> Self {
        TrialDataset { p, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> Counts {
        derive_counts(self)
    }

    pub fn current(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.is_current())
    }

    pub fn external(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.is_external())
    }

    /// The external-control rows as a dataset of their own.
    pub fn external_only(&self) -> TrialDataset {
        TrialDataset::new(self.p, self.external().cloned().collect())
    }

    pub fn current_only(&self) -> TrialDataset {
        TrialDataset::new(self.p, self.current().cloned().collect())
    }

    /// Concatenates the records of `other` (same dimension) after ours.
    pub fn appended(&self, other: &TrialDataset) -> Result<TrialDataset> {
        if other.p != self.p {
            return Err(Error::invalid(
                "p",
                format!(
                    "cannot join datasets of dimension {} and {}",
                    self.p, other.p
                ),
            ));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(TrialDataset::new(self.p, records))
    }
}

/// Checks the structural invariants of a dataset and reports every violation.
pub fn validate_dataset(d: &TrialDataset) -> ValidationReport {
    let mut violations = Vec::new();
    if d.records.is_empty() {
        violations.push(Violation::NoRecords);
    }
    for (i, rec) in d.records.iter().enumerate() {
        if rec.x.len() != d.p {
            violations.push(Violation::DimensionMismatch {
                record: i,
                expected: d.p,
                found: rec.x.len(),
            });
        }
        if rec.r > 1 || rec.a > 1 {
            violations.push(Violation::InvalidIndicator { record: i });
        } else if rec.r == 0 && rec.a == 1 {
            violations.push(Violation::ExternalTreated { record: i });
        }
        if !rec.y.is_finite() || rec.x.iter().any(|v| !v.is_finite()) {
            violations.push(Violation::NonFinite { record: i });
        }
    }
    let counts = derive_counts(d);
    if counts.n_r > 0 && counts.n_t == 0 {
        violations.push(Violation::EmptyTreatedArm);
    }
    ValidationReport { violations, counts }
}

pub fn derive_counts(d: &TrialDataset) -> Counts {
    let mut c = Counts {
        n_r: 0,
        n_e: 0,
        n_t: 0,
        n_c: 0,
    };
    for rec in &d.records {
        if rec.r == 1 {
            c.n_r += 1;
            if rec.a == 1 {
                c.n_t += 1;
            } else {
                c.n_c += 1;
            }
        } else {
            c.n_e += 1;
        }
    }
    c
}

/// The four design methods: two RCT analyses, the hybrid design and the
/// single-arm design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMethod {
    DiffInMeans,
    Aipw,
    HybridEc,
    SingleArm,
}

impl DesignMethod {
    pub const ALL: [DesignMethod; 4] = [
        DesignMethod::DiffInMeans,
        DesignMethod::Aipw,
        DesignMethod::HybridEc,
        DesignMethod::SingleArm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignMethod::DiffInMeans => "diff_in_means",
            DesignMethod::Aipw => "aipw",
            DesignMethod::HybridEc => "hybrid_ec",
            DesignMethod::SingleArm => "single_arm",
        }
    }

    /// Whether the method borrows from external controls.
    pub fn uses_external(self) -> bool {
        matches!(self, DesignMethod::HybridEc | DesignMethod::SingleArm)
    }
}

impl fmt::Display for DesignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "diff_in_means" | "std" | "dim" => Ok(DesignMethod::DiffInMeans),
            "aipw" => Ok(DesignMethod::Aipw),
            "hybrid_ec" | "hybrid" | "ec" => Ok(DesignMethod::HybridEc),
            "single_arm" | "sa" => Ok(DesignMethod::SingleArm),
            _ => Err(Error::invalid("method", format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub x: Vec<f64>,
    pub value: f64,
}

/// A positive function of the covariates: `r(X)`, `d(X)`, `σ²₀,₀(X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Constant {
        value: f64,
    },
    /// `exp(c₀ + cᵀx)`; also covers exponential tilting.
    LogLinear {
        coefficients: Vec<f64>,
    },
    /// Exact-match lookup with nearest-neighbour fallback.
    Table {
        rows: Vec<TableRow>,
    },
}

impl FunctionSpec {
    pub fn constant(value: f64) -> Self {
        FunctionSpec::Constant { value }
    }

    pub fn log_linear(coefficients: Vec<f64>) -> Self {
        FunctionSpec::LogLinear { coefficients }
    }

    /// `Some(c)` when the function does not depend on `x`.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            FunctionSpec::Constant { value } => Some(*value),
            FunctionSpec::LogLinear { coefficients } => {
                let (c0, rest) = coefficients.split_first()?;
                rest.iter().all(|c| *c == 0.0).then(|| c0.exp())
            }
            FunctionSpec::Table { rows } => {
                let first = rows.first()?.value;
                rows.iter().all(|r| r.value == first).then_some(first)
            }
        }
    }

    /// Checks that the function can be evaluated at covariates of width `p`.
    pub fn check_dimension(&self, p: usize) -> Result<()> {
        match self {
            FunctionSpec::Constant { .. } => Ok(()),
            FunctionSpec::LogLinear { coefficients } => {
                if coefficients.len() == p + 1 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "log-linear function has {} coefficients but covariates have width {p} (expected {})",
                        coefficients.len(),
                        p + 1
                    )))
                }
            }
            FunctionSpec::Table { rows } => {
                if rows.is_empty() {
                    return Err(Error::Config("table function has no rows".into()));
                }
                if let Some(bad) = rows.iter().find(|r| r.x.len() != p) {
                    return Err(Error::Config(format!(
                        "table row has width {} but covariates have width {p}",
                        bad.x.len()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_dimension(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the dimension check; callers must have run
    /// [`FunctionSpec::check_dimension`] first.
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            FunctionSpec::Constant { value } => *value,
            FunctionSpec::LogLinear { coefficients } => {
                let eta = coefficients[0]
                    + coefficients[1..]
                        .iter()
                        .zip(x)
                        .map(|(c, v)| c * v)
                        .sum::<f64>();
                eta.exp()
            }
            FunctionSpec::Table { rows } => {
                if let Some(hit) = rows.iter().find(|r| r.x.as_slice() == x) {
                    return hit.value;
                }
                let mut best = &rows[0];
                let mut best_d = f64::INFINITY;
                for row in rows {
                    let d: f64 = row.x.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    // strict < keeps the earliest of tied rows
                    if d < best_d {
                        best_d = d;
                        best = row;
                    }
                }
                best.value
            }
        }
    }
}

/// One column of a synthetic covariate distribution used for integration
/// over X when no EC sample is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateColumn {
    Normal {
        mean: f64,
        variance: f64,
    },
    Bernoulli {
        p: f64,
    },
    /// Square of an earlier column.
    Square {
        of: usize,
    },
    /// Natural log of the absolute value of an earlier column.
    LogAbs {
        of: usize,
    },
}

/// Independent-column covariate distribution for the EC population; sampled
/// deterministically into an integration sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub columns: Vec<CovariateColumn>,
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
}

impl CovariateModel {
    pub fn sample(&self) -> Result<Vec<Vec<f64>>> {
        if self.draws == 0 {
            return Err(Error::invalid("covariate_model.draws", "must be positive"));
        }
        let mut dists = Vec::with_capacity(self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            match col {
                CovariateColumn::Normal { mean, variance } => {
                    let n = Normal::new(*mean, variance.sqrt()).map_err(|_| {
                        Error::invalid("covariate_model", format!("column {j}: bad normal"))
                    })?;
                    dists.push(Some(Ok(n)));
                }
                CovariateColumn::Bernoulli { p } => {
                    let b = Bernoulli::new(*p).map_err(|_| {
                        Error::invalid("covariate_model", format!("column {j}: bad bernoulli"))
                    })?;
                    dists.push(Some(Err(b)));
                }
                CovariateColumn::Square { of } | CovariateColumn::LogAbs { of } => {
                    if *of >= j {
                        return Err(Error::invalid(
                            "covariate_model",
                            format!("column {j} derives from column {of}, which is not earlier"),
                        ));
                    }
                    dists.push(None);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.draws);
        for _ in 0..self.draws {
            let mut row = Vec::with_capacity(self.columns.len());
            for (col, dist) in self.columns.iter().zip(&dists) {
                let v = match (col, dist) {
                    (_, Some(Ok(n))) => n.sample(&mut rng),
                    (_, Some(Err(b))) => f64::from(u8::from(b.sample(&mut rng))),
                    (CovariateColumn::Square { of }, None) => row[*of] * row[*of],
                    (CovariateColumn::LogAbs { of }, None) => f64::ln(f64::abs(row[*of])),
                    _ => unreachable!(),
                };
                row.push(v);
            }
            out.push(row);
        }
        Ok(out)
    }
}

/// Population-level design quantities.
///
/// `σ²₁,₁ = r1_m·σ²₀,₀` and `σ²₀,₁ = r0_m·σ²₀,₀`; `κ₀²` is derived from
/// `r(X)·σ²₀,₀(X)` averaged over the current-study covariate distribution and
/// `κ₁² = gamma1·κ₀²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInputs {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub pi_a: f64,
    pub n_external: u64,
    pub sigma2_00: f64,
    pub sigma2_00_x: FunctionSpec,
    pub r1_m: f64,
    pub r0_m: f64,
    pub gamma1: f64,
    pub gamma: f64,
    pub r_fn: FunctionSpec,
    pub d_fn: FunctionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec_sample: Option<TrialDataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_model: Option<CovariateModel>,
}

fn open_unit(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} is not in (0, 1)")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} must be positive")))
    }
}

impl DesignInputs {
    pub fn sigma2_11(&self) -> f64 {
        self.r1_m * self.sigma2_00
    }

    pub fn sigma2_01(&self) -> f64 {
        self.r0_m * self.sigma2_00
    }

    /// Range checks on every scalar field.
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau", "must be finite"));
        }
        open_unit("alpha", self.alpha)?;
        open_unit("beta", self.beta)?;
        if !(self.pi_a.is_finite() && self.pi_a > 0.0 && self.pi_a <= 1.0) {
            return Err(Error::invalid(
                "pi_a",
                format!("{} is not in (0, 1]", self.pi_a),
            ));
        }
        positive("sigma2_00", self.sigma2_00)?;
        positive("r1_m", self.r1_m)?;
        positive("r0_m", self.r0_m)?;
        positive("gamma1", self.gamma1)?;
        if !(self.gamma.is_finite() && (-1.0..=1.0).contains(&self.gamma)) {
            return Err(Error::invalid(
                "gamma",
                format!("{} is not in [-1, 1]", self.gamma),
            ));
        }
        if let Some(ec) = &self.ec_sample {
            if ec.records.iter().any(|r| r.r != 0) {
                return Err(Error::invalid(
                    "ec_sample",
                    "integration sample must contain external records only",
                ));
            }
        }
        Ok(())
    }
}

/// Partially specified [`DesignInputs`]: every field optional. Used both as
/// the override set of the pre-experimental procedure and as the wire form
/// of input documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_external: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_00: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_00_x: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r0_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_fn: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_fn: Option<FunctionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec_sample: Option<TrialDataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariate_model: Option<CovariateModel>,
}

impl DesignOverrides {
    /// Builds complete inputs without any EC-based estimation. Missing scalar
    /// fields are reported as [`Error::MissingField`]; missing functions as
    /// [`Error::Config`], since they are integration support.
    pub fn into_inputs(self) -> Result<DesignInputs> {
        fn req<T>(v: Option<T>, name: &str) -> Result<T> {
            v.ok_or_else(|| Error::MissingField(name.to_string()))
        }
        fn req_fn(v: Option<FunctionSpec>, name: &str) -> Result<FunctionSpec> {
            v.ok_or_else(|| Error::Config(format!("{name} required when no EC sample is supplied")))
        }
        let inputs = DesignInputs {
            tau: req(self.tau, "tau")?,
            alpha: req(self.alpha, "alpha")?,
            beta: req(self.beta, "beta")?,
            pi_a: req(self.pi_a, "pi_a")?,
            n_external: req(self.n_external, "n_external")?,
            sigma2_00: req(self.sigma2_00, "sigma2_00")?,
            sigma2_00_x: req_fn(self.sigma2_00_x, "sigma2_00_x")?,
            r1_m: req(self.r1_m, "r1_m")?,
            r0_m: req(self.r0_m, "r0_m")?,
            gamma1: req(self.gamma1, "gamma1")?,
            gamma: req(self.gamma, "gamma")?,
            r_fn: req_fn(self.r_fn, "r_fn")?,
            d_fn: req_fn(self.d_fn, "d_fn")?,
            ec_sample: self.ec_sample,
            covariate_model: self.covariate_model,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

impl From<DesignInputs> for DesignOverrides {
    fn from(d: DesignInputs) -> Self {
        DesignOverrides {
            tau: Some(d.tau),
            alpha: Some(d.alpha),
            beta: Some(d.beta),
            pi_a: Some(d.pi_a),
            n_external: Some(d.n_external),
            sigma2_00: Some(d.sigma2_00),
            sigma2_00_x: Some(d.sigma2_00_x),
            r1_m: Some(d.r1_m),
            r0_m: Some(d.r0_m),
            gamma1: Some(d.gamma1),
            gamma: Some(d.gamma),
            r_fn: Some(d.r_fn),
            d_fn: Some(d.d_fn),
            ec_sample: d.ec_sample,
            covariate_model: d.covariate_model,
        }
    }
}

/// The four-term decomposition of the asymptotic variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub total: f64,
    pub method: DesignMethod,
    /// Current-study size at which `r_R` was evaluated; 0 when the variance
    /// does not depend on `N_R`.
    pub n_r_used: u64,
}
