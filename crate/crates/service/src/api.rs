//! Request and response documents shared by the HTTP service and the CLI,
//! and the pure functions that answer them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use trial_forge::design::{
    power_curve, resolve_inputs, sat_closed_form, sat_min_external_n, solve_with, CurvePoint,
    DesignEvaluator, PowerSpec, SampleSizeResult, DEFAULT_GRID_MAX,
};
use trial_forge::{DesignInputs, DesignMethod, DesignOverrides, Error, Result};

/// Upper limit on the number of points in one power curve.
pub const MAX_CURVE_POINTS: usize = 100_000;

/// Current-study sizes, either listed or as an inclusive stepped span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NRange {
    List(Vec<u64>),
    Span { start: u64, end: u64, step: u64 },
}

impl NRange {
    pub fn values(&self) -> Result<Vec<u64>> {
        let v = match self {
            NRange::List(v) => v.clone(),
            NRange::Span { start, end, step } => {
                if *step == 0 {
                    return Err(Error::invalid("n_r", "step must be positive"));
                }
                if start > end {
                    return Err(Error::invalid(
                        "n_r",
                        format!("start {start} exceeds end {end}"),
                    ));
                }
                let count = (end - start) / step + 1;
                if count as usize > MAX_CURVE_POINTS {
                    return Err(Error::invalid(
                        "n_r",
                        format!("{count} points exceeds the limit of {MAX_CURVE_POINTS}"),
                    ));
                }
                (0..count).map(|i| start + i * step).collect()
            }
        };
        if v.is_empty() {
            return Err(Error::invalid("n_r", "range is empty"));
        }
        if v.len() > MAX_CURVE_POINTS {
            return Err(Error::invalid("n_r", "too many points"));
        }
        if v.contains(&0) {
            return Err(Error::invalid("n_r", "sizes must be positive"));
        }
        Ok(v)
    }
}

/// Accepts `start..end:step`, `start..end` (step 1), or a comma list.
impl FromStr for NRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let int = |t: &str| -> Result<u64> {
            t.trim()
                .parse::<u64>()
                .map_err(|_| Error::invalid("n_r", format!("`{t}` is not a nonnegative integer")))
        };
        if let Some((a, rest)) = s.split_once("..") {
            let (b, step) = match rest.split_once(':') {
                Some((b, st)) => (b, int(st)?),
                None => (rest, 1),
            };
            let r = NRange::Span {
                start: int(a)?,
                end: int(b.trim_start_matches('='))
                    .map_err(|_| Error::invalid("n_r", format!("cannot parse range `{s}`")))?,
                step,
            };
            r.values()?;
            return Ok(r);
        }
        if s.is_empty() {
            return Err(Error::invalid("n_r", "range is empty"));
        }
        let r = NRange::List(s.split(',').map(int).collect::<Result<_>>()?);
        r.values()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRequest {
    pub inputs: DesignOverrides,
    /// Overrides `tau`, `alpha` and `beta` of the inputs when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerSpec>,
    /// Empty means every method.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<DesignMethod>,
    /// Empty means the single `pi_a` of the inputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pi_a: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<NRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    /// The `π_A` of the sweep this row belongs to. Single-arm rows report
    /// `pi_a = 1` in the result itself.
    pub sweep_pi_a: f64,
    #[serde(flatten)]
    pub result: SampleSizeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCurve {
    pub method: DesignMethod,
    pub pi_a: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResponse {
    pub request: DesignRequest,
    pub results: Vec<DesignRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<MethodCurve>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl DesignResponse {
    pub fn any_infeasible(&self) -> bool {
        self.results.iter().any(|r| !r.result.feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCurveRequest {
    pub inputs: DesignOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<DesignMethod>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pi_a: Vec<f64>,
    pub n_r: NRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurveResponse {
    pub request: PowerCurveRequest,
    pub curves: Vec<MethodCurve>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityRequest {
    pub inputs: DesignOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResponse {
    pub request: FeasibilityRequest,
    pub n_external: u64,
    /// `N_E` must strictly exceed this for the single-arm design to reach the target power.
    pub external_bound: f64,
    pub min_external_n: u64,
    pub feasible: bool,
    /// Closed-form single-arm size, present when feasible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_form_n_r: Option<u64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Machine-readable failure, also used as the HTTP error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind, field) = match &e {
            Error::InvalidField { field, .. } => (400, "invalid_field", Some(field.clone())),
            Error::MissingField(field) => (400, "missing_field", Some(field.clone())),
            Error::Json(_) => (400, "malformed_body", None),
            Error::Csv(_) => (400, "malformed_body", None),
            Error::InvalidInputs(_) => (422, "invalid_inputs", None),
            Error::Config(_) => (422, "configuration", None),
            Error::Validation(_) => (422, "validation", None),
            Error::EmptyArm(_) => (422, "empty_arm", None),
            Error::Io(_) => (500, "io", None),
            _ => (500, "numeric_failure", None),
        };
        ApiError {
            status,
            kind: kind.to_string(),
            field,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::from(Error::Json(e))
    }
}

fn resolve(
    inputs: &DesignOverrides,
    power: Option<PowerSpec>,
) -> Result<(DesignInputs, PowerSpec)> {
    let mut o = inputs.clone();
    if let Some(p) = power {
        o.tau = Some(p.tau);
        o.alpha = Some(p.alpha);
        // keep a beta already consistent with the target, so echoed requests are fixed points
        if o.beta.map(|b| 1.0 - b) != Some(p.target_power) {
            o.beta = Some(1.0 - p.target_power);
        }
    }
    let inp = resolve_inputs(&o)?;
    let spec = power.unwrap_or_else(|| PowerSpec::from_inputs(&inp));
    spec.validate()?;
    Ok((inp, spec))
}

fn canonical_methods(methods: &[DesignMethod]) -> Vec<DesignMethod> {
    if methods.is_empty() {
        return DesignMethod::ALL.to_vec();
    }
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

fn canonical_pi(pi: &[f64], inp: &DesignInputs) -> Result<Vec<f64>> {
    if pi.is_empty() {
        return Ok(vec![inp.pi_a]);
    }
    for &p in pi {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid("pi_a", format!("{p} is not in (0, 1]")));
        }
    }
    Ok(pi.to_vec())
}

fn evaluator_at(base: &DesignEvaluator, pi: f64) -> DesignEvaluator {
    let mut ev = base.clone();
    ev.inputs.pi_a = pi;
    ev
}

/// Pairs of (method, π_A) to evaluate. Methods with an internal control arm
/// are skipped at `π_A = 1`, where only the single-arm design is defined.
fn plan(
    methods: &[DesignMethod],
    pis: &[f64],
    notes: &mut Vec<String>,
) -> Result<Vec<(DesignMethod, f64)>> {
    let mut out = Vec::new();
    for &pi in pis {
        for &m in methods {
            if pi >= 1.0 && m != DesignMethod::SingleArm {
                notes.push(format!(
                    "{m} needs an internal control arm; skipped at pi_a = 1"
                ));
                continue;
            }
            out.push((m, pi));
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(
            "pi_a",
            "no requested method is defined at the requested allocation ratios",
        ));
    }
    Ok(out)
}

fn ensure_finite<T: Serialize>(doc: &T) -> Result<()> {
    fn walk(v: &serde_json::Value) -> bool {
        match v {
            serde_json::Value::Null => false,
            serde_json::Value::Array(a) => a.iter().all(walk),
            serde_json::Value::Object(o) => o.values().all(walk),
            _ => true,
        }
    }
    // serde_json writes NaN and infinities as null, and no response field is nullable
    if walk(&serde_json::to_value(doc)?) {
        Ok(())
    } else {
        Err(Error::NonFinite(
            "response contains a non-finite number".into(),
        ))
    }
}

fn infeasibility_note(r: &SampleSizeResult, n_external: u64) -> Option<String> {
    if r.feasible {
        return None;
    }
    Some(match (r.external_bound, r.min_external_n) {
        (Some(b), Some(min)) => format!(
            "{} design infeasible with N_E = {n_external}: requires N_E >= {min} (bound {b:.2})",
            r.method
        ),
        _ => format!(
            "{} design does not reach the target power within the search grid",
            r.method
        ),
    })
}

pub fn compute_design(req: &DesignRequest) -> Result<DesignResponse> {
    let (inp, spec) = resolve(&req.inputs, req.power)?;
    let methods = canonical_methods(&req.methods);
    let pis = canonical_pi(&req.pi_a, &inp)?;
    let grid_max = req.grid_max.unwrap_or(DEFAULT_GRID_MAX);
    let curve_n = req.curve.as_ref().map(NRange::values).transpose()?;
    let base = DesignEvaluator::new(&inp)?;

    let mut notes = Vec::new();
    let mut results = Vec::new();
    let mut curves = Vec::new();
    for (m, pi) in plan(&methods, &pis, &mut notes)? {
        let ev = evaluator_at(&base, pi);
        let r = solve_with(&ev, m, &spec, grid_max)?;
        if let Some(n) = infeasibility_note(&r, inp.n_external) {
            if !notes.contains(&n) {
                notes.push(n);
            }
        }
        results.push(DesignRow {
            sweep_pi_a: pi,
            result: r,
        });
        if let Some(n) = &curve_n {
            curves.push(MethodCurve {
                method: m,
                pi_a: pi,
                points: power_curve(m, &ev, &spec, n)?,
            });
        }
    }

    let resp = DesignResponse {
        request: DesignRequest {
            inputs: DesignOverrides::from(inp),
            power: Some(spec),
            methods,
            pi_a: pis,
            curve: req.curve.clone(),
            grid_max: Some(grid_max),
        },
        results,
        curves,
        notes,
    };
    ensure_finite(&resp)?;
    Ok(resp)
}

pub fn compute_power_curve(req: &PowerCurveRequest) -> Result<PowerCurveResponse> {
    let n = req.n_r.values()?;
    let (inp, spec) = resolve(&req.inputs, req.power)?;
    let methods = canonical_methods(&req.methods);
    let pis = canonical_pi(&req.pi_a, &inp)?;
    let base = DesignEvaluator::new(&inp)?;
    let mut notes = Vec::new();
    let mut curves = Vec::new();
    for (m, pi) in plan(&methods, &pis, &mut notes)? {
        let ev = evaluator_at(&base, pi);
        curves.push(MethodCurve {
            method: m,
            pi_a: pi,
            points: power_curve(m, &ev, &spec, &n)?,
        });
    }
    let resp = PowerCurveResponse {
        request: PowerCurveRequest {
            inputs: DesignOverrides::from(inp),
            power: Some(spec),
            methods,
            pi_a: pis,
            n_r: req.n_r.clone(),
        },
        curves,
        notes,
    };
    ensure_finite(&resp)?;
    Ok(resp)
}

pub fn compute_feasibility(req: &FeasibilityRequest) -> Result<FeasibilityResponse> {
    let (inp, spec) = resolve(&req.inputs, req.power)?;
    let bound = sat_min_external_n(&inp, &spec)?;
    let closed = sat_closed_form(&inp, &spec)?;
    let min_external_n = bound.floor() as u64 + 1;
    let feasible = (inp.n_external as f64) > bound;
    let mut notes = Vec::new();
    if !feasible {
        notes.push(format!(
            "single_arm design infeasible with N_E = {}: requires N_E >= {min_external_n}",
            inp.n_external
        ));
    }
    let resp = FeasibilityResponse {
        n_external: inp.n_external,
        external_bound: bound,
        min_external_n,
        feasible,
        closed_form_n_r: closed,
        notes,
        request: FeasibilityRequest {
            inputs: DesignOverrides::from(inp),
            power: Some(spec),
        },
    };
    ensure_finite(&resp)?;
    Ok(resp)
}
