//! Command implementations behind the `trial-forge` binary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use trial_forge::estimators::{fit_and_estimate, EstimateResult, DEFAULT_ALPHA};
use trial_forge::io::{load_dataset_csv, write_dataset_csv};
use trial_forge::nuisance::{Mu0Source, NuisanceOptions, PropensityMode};
use trial_forge::simulate::{
    bootstrap_emulation, generate_scenario_dataset, monte_carlo_study, reproduce_required_sizes,
    write_size_table_csv, write_study_csv, Scenario, ScenarioSpec, SizingMode, StudyOptions,
    StudyReport,
};
use trial_forge::{
    validate_dataset, Counts, DesignMethod, DesignOverrides, Error, Result, TrialDataset,
};
use trial_forge_service::api::{compute_design, DesignRequest, DesignResponse, NRange};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "trial-forge",
    version,
    about = "Design and analysis of hybrid controlled trials"
)]
pub struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads for parallel work.
    #[arg(long, global = true, env = "TRIAL_FORGE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Required sample sizes for one or more designs.
    Design(DesignArgs),
    /// Monte Carlo rejection rates over an n_r sweep.
    Simulate(SimulateArgs),
    /// Treatment-effect estimates on a dataset.
    Estimate(EstimateArgs),
    /// Bootstrap trial emulation from an existing dataset.
    Emulate(EmulateArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DesignArgs {
    /// Design inputs document (JSON).
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    /// External-control CSV for pre-experimental estimation.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated methods, or `all`.
    #[arg(long, default_value = "all")]
    pub method: String,
    /// Comma-separated allocation ratios to sweep.
    #[arg(long)]
    pub pi_a: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Target power, 1 - beta.
    #[arg(long)]
    pub power: Option<f64>,
    #[arg(long)]
    pub n_e: Option<u64>,
    /// Also emit power curves over this range (`a..b:step` or a list).
    #[arg(long)]
    pub n_r: Option<NRange>,
    #[arg(long)]
    pub grid_max: Option<u64>,
    /// Field override `key=value`; the value is read as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Report path; `.csv` writes the size table, anything else JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "main_sufficient")]
    pub scenario: String,
    #[arg(long, default_value = "hybrid_ec")]
    pub method: String,
    /// Current-study sizes (`a..b:step` or a list).
    #[arg(long)]
    pub n_r: Option<NRange>,
    #[arg(long, default_value_t = 0.4)]
    pub tau: f64,
    /// Allocation ratio; a comma list when producing a size table.
    #[arg(long, default_value = "0.5")]
    pub pi_a: String,
    #[arg(long, default_value_t = 1000)]
    pub n_e: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Replace the fitted outcome model by zero coefficients.
    #[arg(long)]
    pub zero_mu0: bool,
    /// Produce a required-size table (`true` or `non_informative`) instead of a study.
    #[arg(long, value_parser = parse_sizing_mode)]
    pub size_table: Option<SizingMode>,
    /// EC regenerations for a non-informative size table.
    #[arg(long, default_value_t = 200)]
    pub ec_reps: usize,
    /// Write the first replicate dataset (first n_r) to this CSV and stop.
    #[arg(long)]
    pub emit_dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Dataset CSV with header `y,a,r,x1,...,xp`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "all")]
    pub method: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Known randomization probability; estimated from the data otherwise.
    #[arg(long)]
    pub pi_a: Option<f64>,
    /// Controls used to fit the hybrid outcome model: `pooled` or `internal`.
    #[arg(long, default_value = "pooled")]
    pub mu0: String,
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EmulateArgs {
    /// Source dataset; its current-study rows are resampled.
    #[arg(long)]
    pub data: PathBuf,
    /// External controls; the external rows of `--data` otherwise.
    #[arg(long)]
    pub ec: Option<PathBuf>,
    #[arg(long, default_value = "hybrid_ec")]
    pub method: String,
    #[arg(long)]
    pub n_r: NRange,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Comma-separated reference effects for CI coverage.
    #[arg(long, default_value = "0")]
    pub reference: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = trial_forge_service::DEFAULT_BIND)]
    pub bind: SocketAddr,
}

fn parse_sizing_mode(s: &str) -> std::result::Result<SizingMode, String> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "true" | "oracle" => Ok(SizingMode::True),
        "non_informative" => Ok(SizingMode::NonInformative),
        _ => Err(format!("unknown size-table mode `{s}`")),
    }
}

/// What a command produced: the exit code and a line for the terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USER
    }
}

pub fn parse_methods(s: &str) -> Result<Vec<DesignMethod>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(DesignMethod::ALL.to_vec());
    }
    let mut m = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<DesignMethod>>>()?;
    if m.is_empty() {
        return Err(Error::invalid("method", "no method given"));
    }
    m.sort();
    m.dedup();
    Ok(m)
}

fn parse_reals(field: &str, s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(field, format!("`{t}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::invalid(field, "no values given"));
    }
    Ok(v)
}

pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::invalid("threads", "must be at least 1"));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn write_json<T: Serialize>(doc: &T, out: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, doc)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid("inputs", format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    if !v.is_object() {
        return Err(Error::invalid("inputs", "document must be a JSON object"));
    }
    Ok(v)
}

fn load_csv(field: &str, path: &Path) -> Result<TrialDataset> {
    if !path.exists() {
        return Err(Error::invalid(
            field,
            format!("{} does not exist", path.display()),
        ));
    }
    load_dataset_csv(path)
}

/// Assembles the request `cmd_design` sends to the design engine: the inputs
/// document, then `--set` overrides, then the dedicated flags.
pub fn design_request(args: &DesignArgs) -> Result<DesignRequest> {
    if args.inputs.is_none() && args.data.is_none() {
        return Err(Error::Config(
            "either --inputs or --data is required".into(),
        ));
    }
    let mut doc = match &args.inputs {
        Some(p) => read_document(p)?,
        None => Value::Object(Default::default()),
    };
    let obj = doc.as_object_mut().expect("checked above");
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid("set", format!("`{kv}` is not KEY=VALUE")))?;
        let v = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().into()));
        obj.insert(k.trim().to_string(), v);
    }
    let mut num = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            obj.insert(k.to_string(), Value::from(v));
        }
    };
    num("tau", args.tau);
    num("alpha", args.alpha);
    num("beta", args.power.map(|p| 1.0 - p));
    if let Some(n) = args.n_e {
        obj.insert("n_external".into(), Value::from(n));
    }
    let mut inputs: DesignOverrides = serde_json::from_value(doc)?;
    if let Some(p) = &args.data {
        inputs.ec_sample = Some(load_csv("data", p)?);
    }
    let pi_a = match &args.pi_a {
        Some(s) => parse_reals("pi_a", s)?,
        None => Vec::new(),
    };
    Ok(DesignRequest {
        inputs,
        power: None,
        methods: parse_methods(&args.method)?,
        pi_a,
        curve: args.n_r.clone(),
        grid_max: args.grid_max,
    })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_design_csv(resp: &DesignResponse, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "method,pi_a,n_r,n_t,n_c,predicted_power,term1,term2,term3,term4,variance,feasible,min_external_n"
    )?;
    for row in &resp.results {
        let r = &row.result;
        let v = &r.variance_at_n;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            row.sweep_pi_a,
            r.n_r,
            r.n_t,
            r.n_c,
            r.predicted_power,
            v.term1,
            v.term2,
            v.term3,
            v.term4,
            v.total,
            r.feasible,
            fmt_opt(r.min_external_n)
        )?;
    }
    Ok(())
}

pub fn design_summary(resp: &DesignResponse) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>5} {:>6} {:>6} {:>6} {:>7}",
        "method", "pi_a", "n_r", "n_t", "n_c", "power"
    );
    for row in &resp.results {
        let r = &row.result;
        if r.feasible {
            let _ = writeln!(
                s,
                "{:<14} {:>5} {:>6} {:>6} {:>6} {:>7.4}",
                r.method.name(),
                row.sweep_pi_a,
                r.n_r,
                r.n_t,
                r.n_c,
                r.predicted_power
            );
        } else {
            let _ = writeln!(
                s,
                "{:<14} {:>5}   infeasible",
                r.method.name(),
                row.sweep_pi_a
            );
        }
    }
    for n in &resp.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

pub fn cmd_design(args: &DesignArgs) -> Result<(DesignResponse, Outcome)> {
    let resp = compute_design(&design_request(args)?)?;
    match &args.out {
        Some(p) => {
            let mut w = open_out(p)?;
            if is_csv(p) {
                write_design_csv(&resp, &mut w)?;
            } else {
                write_json(&resp, &mut w)?;
            }
            w.flush()?;
        }
        None => write_json(&resp, &mut io::stdout().lock())?,
    }
    let infeasible: Vec<String> = resp
        .results
        .iter()
        .filter(|r| !r.result.feasible)
        .map(|r| match r.result.min_external_n {
            Some(min) => format!(
                "{} design infeasible with N_E = {}: requires N_E ≥ {min}",
                r.result.method,
                resp.request.inputs.n_external.unwrap_or(0)
            ),
            None => format!(
                "{} design infeasible within the search grid",
                r.result.method
            ),
        })
        .collect();
    let outcome = if infeasible.is_empty() {
        Outcome {
            code: EXIT_OK,
            message: if args.out.is_some() {
                design_summary(&resp)
            } else {
                String::new()
            },
        }
    } else {
        let mut uniq = infeasible;
        uniq.dedup();
        Outcome {
            code: EXIT_INFEASIBLE,
            message: uniq.join("\n"),
        }
    };
    Ok((resp, outcome))
}

pub fn cmd_simulate(args: &SimulateArgs, seed: u64) -> Result<Outcome> {
    let scenario: Scenario = args.scenario.parse()?;
    let methods = parse_methods(&args.method)?;
    let pis = parse_reals("pi_a", &args.pi_a)?;
    if let Some(p) = &args.emit_dataset {
        let n = match &args.n_r {
            Some(r) => r.values()?[0],
            None => return Err(Error::MissingField("n_r".into())),
        };
        let spec = ScenarioSpec::new(scenario, args.tau, pis[0], n as usize, args.n_e, seed);
        let d = generate_scenario_dataset(&spec)?;
        let mut w = open_out(p)?;
        write_dataset_csv(&d, &mut w)?;
        w.flush()?;
        return Ok(Outcome {
            code: EXIT_OK,
            message: format!("wrote {} records to {}", d.len(), p.display()),
        });
    }
    if args.reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(open_out(p)?),
        None => Box::new(io::stdout().lock()),
    };
    if let Some(mode) = args.size_table {
        let spec = ScenarioSpec::new(scenario, args.tau, pis[0], 0, args.n_e, seed);
        let table = reproduce_required_sizes(&spec, &methods, &pis, mode, args.ec_reps)?;
        write_size_table_csv(&table, &mut out)?;
        out.flush()?;
        return Ok(Outcome {
            code: EXIT_OK,
            message: format!("{} size rows", table.rows.len()),
        });
    }
    if pis.len() != 1 {
        return Err(Error::invalid(
            "pi_a",
            "a study takes a single allocation ratio",
        ));
    }
    let n_values = args
        .n_r
        .as_ref()
        .ok_or_else(|| Error::MissingField("n_r".into()))?
        .values()?;
    let mut reports: Vec<StudyReport> = Vec::new();
    for &m in &methods {
        for &n in &n_values {
            let spec = ScenarioSpec::new(scenario, args.tau, pis[0], n as usize, args.n_e, seed);
            let pi = if m == DesignMethod::SingleArm {
                1.0
            } else {
                pis[0]
            };
            let opts = StudyOptions {
                alpha: args.alpha,
                nuisance: NuisanceOptions {
                    propensity: PropensityMode::Known(pi),
                    ..NuisanceOptions::default()
                },
                zero_mu0: args.zero_mu0,
                keep_log: false,
            };
            reports.push(monte_carlo_study(&spec, m, args.reps, &opts)?);
        }
    }
    write_study_csv(&reports, &mut out)?;
    out.flush()?;
    Ok(Outcome {
        code: EXIT_OK,
        message: format!("{} study rows", reports.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateDocument {
    pub data: String,
    pub counts: Counts,
    pub results: Vec<EstimateResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn without_internal_controls(d: &TrialDataset) -> TrialDataset {
    TrialDataset::new(
        d.p,
        d.records
            .iter()
            .filter(|r| !r.is_internal_control())
            .cloned()
            .collect(),
    )
}

pub fn estimate_document(args: &EstimateArgs) -> Result<EstimateDocument> {
    let d = load_csv("data", &args.data)?;
    let counts = validate_dataset(&d).into_result()?;
    let requested_all = args.method.trim().eq_ignore_ascii_case("all");
    let methods = parse_methods(&args.method)?;
    let mu0_source = match args.mu0.trim().to_ascii_lowercase().as_str() {
        "pooled" => Mu0Source::Pooled,
        "internal" | "internal_only" => Mu0Source::InternalOnly,
        other => return Err(Error::invalid("mu0", format!("unknown source `{other}`"))),
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::invalid(
            "alpha",
            format!("{} is not in (0, 1)", args.alpha),
        ));
    }
    let mut results = Vec::new();
    let mut notes = Vec::new();
    for m in methods {
        let propensity = match args.pi_a {
            Some(p) if m != DesignMethod::SingleArm => PropensityMode::Known(p),
            _ => PropensityMode::Empirical,
        };
        let opts = NuisanceOptions {
            mu0_source,
            propensity,
            ridge: args.ridge,
        };
        // the single-arm analysis compares the treated arm with external controls only
        let data = if m == DesignMethod::SingleArm && counts.n_c > 0 {
            notes.push(format!(
                "single_arm ignores the {} internal controls",
                counts.n_c
            ));
            without_internal_controls(&d)
        } else {
            d.clone()
        };
        match fit_and_estimate(m, &data, &opts, args.alpha) {
            Ok(r) => results.push(r),
            Err(e @ Error::EmptyArm(_)) if requested_all => notes.push(format!("{m} skipped: {e}")),
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        return Err(Error::EmptyArm(
            "no method is applicable to this dataset".into(),
        ));
    }
    Ok(EstimateDocument {
        data: args.data.display().to_string(),
        counts,
        results,
        notes,
    })
}

pub fn estimate_summary(doc: &EstimateDocument) -> String {
    let mut s = String::new();
    for r in &doc.results {
        let _ = writeln!(
            s,
            "{:<14} tau_hat = {:.4}  se = {:.4}  {:.0}% CI [{:.4}, {:.4}]  p = {:.4}",
            r.method.name(),
            r.tau_hat,
            r.se,
            (1.0 - r.alpha) * 100.0,
            r.ci_low,
            r.ci_high,
            r.p_value
        );
    }
    for n in &doc.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<Outcome> {
    let doc = estimate_document(args)?;
    if let Some(p) = &args.out {
        let mut w = open_out(p)?;
        write_json(&doc, &mut w)?;
        w.flush()?;
    } else {
        write_json(&doc, &mut io::stdout().lock())?;
    }
    Ok(Outcome {
        code: EXIT_OK,
        message: estimate_summary(&doc),
    })
}

pub fn cmd_emulate(args: &EmulateArgs, seed: u64) -> Result<Outcome> {
    let d = load_csv("data", &args.data)?;
    let (source, ec) = match &args.ec {
        Some(p) => (d.current_only(), load_csv("ec", p)?.external_only()),
        None => (d.current_only(), d.external_only()),
    };
    let methods = parse_methods(&args.method)?;
    let refs = parse_reals("reference", &args.reference)?;
    let mut reports = Vec::new();
    for &m in &methods {
        for n in args.n_r.values()? {
            reports.push(bootstrap_emulation(
                &source, &ec, m, n as usize, args.reps, args.alpha, &refs, seed,
            )?);
        }
    }
    match &args.out {
        Some(p) if is_csv(p) => {
            let mut w = open_out(p)?;
            write_study_csv(&reports, &mut w)?;
            w.flush()?;
        }
        Some(p) => {
            let mut w = open_out(p)?;
            write_json(&reports, &mut w)?;
            w.flush()?;
        }
        None => write_json(&reports, &mut io::stdout().lock())?,
    }
    Ok(Outcome {
        code: EXIT_OK,
        message: format!("{} emulation rows", reports.len()),
    })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<Outcome> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    eprintln!("listening on http://{}", args.bind);
    rt.block_on(trial_forge_service::serve(args.bind))?;
    Ok(Outcome {
        code: EXIT_OK,
        message: String::new(),
    })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = configure_threads(cli.threads).and_then(|_| match &cli.command {
        Command::Design(a) => cmd_design(a).map(|(_, o)| o),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Emulate(a) => cmd_emulate(a, cli.seed),
        Command::Serve(a) => cmd_serve(a),
    });
    match result {
        Ok(o) => {
            if !o.message.is_empty() {
                if o.code == EXIT_OK {
                    eprint!("{}", o.message);
                    if !o.message.ends_with('\n') {
                        eprintln!();
                    }
                } else {
                    eprintln!("{}", o.message);
                }
            }
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
