//! Command-line front end. [`run`] is the whole program minus process I/O,
//! so tests can drive it directly.

use std::ffi::OsString;
use std::fmt::Write as _;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hmm_analytic::conditions::{check_theorem_1_1, check_theorem_6_1};
use hmm_analytic::domain::{default_r_grid, default_rho_grid, radius_search, taylor_coefficients, BscFamily};
use hmm_analytic::entropy::{bracket_sequence, blackwell_entropy_mc, entropy_rate, EntropyEstimate};
use hmm_analytic::model_file::{load_model, parse_model, LoadedModel};
use hmm_analytic::report::to_json_string;
use hmm_analytic::unambiguous::{check_conditions, decompose, series_entropy, series_terms};
use hmm_analytic::{Error, Execution};
use serde::Serialize;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MALFORMED: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

#[derive(Debug, Parser)]
#[command(name = "hmm-analytic", version, about = "Entropy rates and analyticity checks for hidden Markov chains")]
pub struct RunConfig {
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Entropy rate with a certified bracket.
    Entropy(EntropyArgs),
    /// Upper and lower bounds for n = 0..=max-n.
    Bounds(BoundsArgs),
    /// Column-pattern and limit-set analyticity conditions.
    Check(CheckArgs),
    /// Run-length series around an unambiguous symbol.
    Unambiguous(UnambiguousArgs),
    /// Certified analyticity radius for a binary source behind a BSC.
    Radius(RadiusArgs),
    /// Taylor coefficients of the BSC entropy rate at zero noise.
    Taylor(TaylorArgs),
    /// Monte Carlo entropy rate from sampled beliefs.
    Blackwell(BlackwellArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Path to a model file, or the JSON text itself.
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long = "max-n", default_value_t = 20)]
    pub max_n: usize,
    /// Report in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long = "max-n", default_value_t = 12)]
    pub max_n: usize,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Word length used to approximate the limit set.
    #[arg(long = "limit-depth", default_value_t = 6)]
    pub limit_depth: usize,
    /// Longest composition tried for eventual contraction.
    #[arg(long = "max-depth", default_value_t = 4)]
    pub max_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnambiguousReport {
    Verdict,
    Terms,
    Entropy,
}

#[derive(Debug, Args)]
pub struct UnambiguousArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = UnambiguousReport::Verdict)]
    pub report: UnambiguousReport,
    #[arg(long = "j-max", default_value_t = 200)]
    pub j_max: usize,
    /// Number of series terms listed by `--report terms`.
    #[arg(long, default_value_t = 20)]
    pub terms: usize,
}

#[derive(Debug, Args)]
pub struct RadiusArgs {
    /// Transition probabilities `p00,p01,p10,p11`.
    #[arg(long, allow_hyphen_values = true)]
    pub pi: String,
    #[arg(long = "rho-grid", value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long = "R-grid", value_delimiter = ',')]
    pub r_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TaylorArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub pi: String,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BlackwellArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long = "path-length", default_value_t = 50)]
    pub path_length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// What the process should print and return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// A report plus the CSV table that represents it.
struct Report {
    value: Value,
    json: String,
    table: Table,
    exit_code: i32,
    note: Option<String>,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    fn from_records(records: &[Value]) -> Self {
        let headers: Vec<String> = match records.first() {
            Some(Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        };
        let rows = records
            .iter()
            .map(|r| headers.iter().map(|h| r.get(h).cloned().unwrap_or(Value::Null)).collect())
            .collect();
        Self { headers, rows }
    }

    fn single(record: &Value) -> Self {
        Self::from_records(std::slice::from_ref(record))
    }
}

impl Report {
    fn new<T: Serialize>(report: &T, table: impl FnOnce(&Value) -> Table) -> Result<Self, Failure> {
        let json = to_json_string(report).map_err(|e| Failure::Malformed(e.to_string()))?;
        let value: Value = serde_json::from_str(&json).map_err(|e| Failure::Malformed(e.to_string()))?;
        let table = table(&value);
        Ok(Self { value, json, table, exit_code: EXIT_OK, note: None })
    }

    fn negative(mut self, note: impl Into<String>) -> Self {
        self.exit_code = EXIT_NEGATIVE;
        self.note = Some(note.into());
        self
    }
}

enum Failure {
    Malformed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Malformed(e.to_string())
    }
}

fn load(arg: &ModelArg) -> Result<LoadedModel, Failure> {
    let text = arg.model.trim_start();
    let loaded = if text.starts_with('{') { parse_model(text) } else { load_model(&arg.model) };
    Ok(loaded?)
}

#[derive(Serialize)]
struct EntropyOut {
    value: f64,
    lower: f64,
    upper: f64,
    n: usize,
    method: &'static str,
    unit: &'static str,
}

impl EntropyOut {
    fn new(est: &EntropyEstimate, method: &'static str, bits: bool) -> Self {
        let scale = if bits { std::f64::consts::LN_2.recip() } else { 1.0 };
        Self {
            value: est.value * scale,
            lower: est.lower * scale,
            upper: est.upper * scale,
            n: est.depth_n,
            method,
            unit: if bits { "bits" } else { "nats" },
        }
    }
}

fn entropy(args: &EntropyArgs) -> Result<Report, Failure> {
    let model = load(&args.model)?.model;
    match entropy_rate(&model, args.tol, args.max_n) {
        Ok(est) => Report::new(&EntropyOut::new(&est, "enumeration", args.bits), Table::single),
        Err(Error::ToleranceNotReached { best }) => {
            let gap = best.upper - best.lower;
            Ok(Report::new(&EntropyOut::new(&best, "enumeration", args.bits), Table::single)?
                .negative(format!("tolerance {:e} not reached: gap {gap:e} at n = {}", args.tol, best.depth_n)))
        }
        Err(e) => Err(e.into()),
    }
}

fn bounds(args: &BoundsArgs) -> Result<Report, Failure> {
    let model = load(&args.model)?.model;
    let brackets = bracket_sequence(&model, args.max_n, Execution::default())?;
    Report::new(&brackets, |v| Table::from_records(v.as_array().map(Vec::as_slice).unwrap_or(&[])))
}

fn check(args: &CheckArgs) -> Result<Report, Failure> {
    let model = load(&args.model)?.model;
    let t11 = check_theorem_1_1(&model);
    let t61 = check_theorem_6_1(&model, args.limit_depth, args.max_depth);
    let holds = t11.holds() || t61.as_ref().is_ok_and(|r| r.holds());
    let t61_value = match &t61 {
        Ok(r) => serde_json::to_value(r).map_err(|e| Failure::Malformed(e.to_string()))?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    let report = json!({ "theorem_1_1": t11, "theorem_6_1": t61_value });
    let table = |_: &Value| {
        let mut rows = vec![
            vec![json!("theorem_1_1"), json!("cond1"), json!(t11.cond1)],
            vec![json!("theorem_1_1"), json!("cond2"), json!(t11.cond2)],
        ];
        if let Ok(r) = &t61 {
            for (name, v) in [("cond1", r.cond1), ("cond2", r.cond2), ("cond3", r.cond3)] {
                rows.push(vec![json!("theorem_6_1"), json!(name), json!(v)]);
            }
        }
        Table { headers: vec!["theorem".into(), "condition".into(), "holds".into()], rows }
    };
    let out = Report::new(&report, table)?;
    Ok(if holds { out } else { out.negative("no sufficient analyticity condition holds") })
}

fn unambiguous(args: &UnambiguousArgs) -> Result<Report, Failure> {
    let model = load(&args.model)?.model;
    let dec = decompose(&model)?;
    match args.report {
        UnambiguousReport::Verdict => match check_conditions(&dec, args.j_max) {
            Ok(v) => {
                let analytic = v.analytic;
                let out = Report::new(&v, |val| {
                    let mut flat = val.clone();
                    if let Some(m) = flat.as_object_mut() {
                        let witness = m.remove("failure_witness").unwrap_or(Value::Null);
                        m.insert("failure_witness".into(), witness.get("kind").cloned().unwrap_or(Value::Null));
                    }
                    Table::single(&flat)
                })?;
                Ok(if analytic { out } else { out.negative("analyticity conditions fail") })
            }
            Err(Error::Inconclusive { j0, j_max }) => {
                let j0 = if j0 == u64::MAX { Value::Null } else { json!(j0) };
                let report = json!({ "status": "inconclusive", "j0": j0, "j_max": j_max });
                Ok(Report::new(&report, Table::single)?.negative("condition 1 is inconclusive within j-max"))
            }
            Err(e) => Err(e.into()),
        },
        UnambiguousReport::Terms => {
            let terms = series_terms(&dec, args.terms);
            Report::new(&terms, |v| Table::from_records(v.as_array().map(Vec::as_slice).unwrap_or(&[])))
        }
        UnambiguousReport::Entropy => {
            let est = series_entropy(&dec, args.tol)?;
            Report::new(&EntropyOut::new(&est, "series", false), Table::single)
        }
    }
}

fn radius(args: &RadiusArgs) -> Result<Report, Failure> {
    let family = BscFamily::parse(&args.pi)?;
    let rho = args.rho_grid.clone().unwrap_or_else(default_rho_grid);
    let big_r = args.r_grid.clone().unwrap_or_else(default_r_grid);
    match radius_search(&family, &rho, &big_r) {
        Ok(cert) => Report::new(&cert, |_| {
            let mut headers = vec!["rho".to_string(), "r".into(), "R".into(), "feasible".into()];
            let mut row = vec![json!(cert.rho), json!(cert.r), json!(cert.big_r), json!(cert.feasible)];
            for s in &cert.slacks {
                headers.push(s.name.to_string());
                row.push(json!(s.value));
            }
            Table { headers, rows: vec![row] }
        }),
        Err(Error::NoFeasiblePoint) => {
            let report = json!({ "feasible": false, "rho_grid": rho, "R_grid": big_r });
            Ok(Report::new(&report, |_| Table {
                headers: vec!["feasible".into()],
                rows: vec![vec![json!(false)]],
            })?
            .negative("no feasible point on the search grid"))
        }
        Err(e) => Err(e.into()),
    }
}

fn taylor(args: &TaylorArgs) -> Result<Report, Failure> {
    let family = BscFamily::parse(&args.pi)?;
    let rep = taylor_coefficients(&family, args.order, args.tol)?;
    Report::new(&rep, |_| Table {
        headers: vec!["k".into(), "coefficient".into(), "error".into()],
        rows: rep
            .coefficients
            .iter()
            .zip(&rep.errors)
            .enumerate()
            .map(|(k, (c, e))| vec![json!(k), json!(c), json!(e)])
            .collect(),
    })
}

#[derive(Serialize)]
struct BlackwellOut {
    estimate: f64,
    std_error: f64,
    samples: usize,
    path_length: usize,
    seed: u64,
}

fn blackwell(args: &BlackwellArgs) -> Result<Report, Failure> {
    let model = load(&args.model)?.model;
    let mc = blackwell_entropy_mc(&model, args.samples, args.path_length, args.seed)?;
    let out = BlackwellOut {
        estimate: mc.estimate,
        std_error: mc.std_error,
        samples: mc.samples,
        path_length: args.path_length,
        seed: args.seed,
    };
    Report::new(&out, Table::single)
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) if n.is_f64() => format!("{:.16e}", n.as_f64().unwrap()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn render_csv(table: &Table) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure::Malformed(e.to_string());
    w.write_record(&table.headers).map_err(fail)?;
    for row in &table.rows {
        w.write_record(row.iter().map(csv_cell)).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Malformed(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn render_pretty(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                if x.is_object() || x.is_array() {
                    let _ = writeln!(out, "{pad}{k}:");
                    render_pretty(x, indent + 1, out);
                } else {
                    let _ = writeln!(out, "{pad}{k}: {}", scalar(x));
                }
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                if x.is_object() || x.is_array() {
                    let _ = writeln!(out, "{pad}[{i}]");
                    render_pretty(x, indent + 1, out);
                } else {
                    let _ = writeln!(out, "{pad}- {}", scalar(x));
                }
            }
        }
        other => {
            let _ = writeln!(out, "{pad}{}", scalar(other));
        }
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn execute(config: &RunConfig) -> Result<Report, Failure> {
    match &config.command {
        Command::Entropy(a) => entropy(a),
        Command::Bounds(a) => bounds(a),
        Command::Check(a) => check(a),
        Command::Unambiguous(a) => unambiguous(a),
        Command::Radius(a) => radius(a),
        Command::Taylor(a) => taylor(a),
        Command::Blackwell(a) => blackwell(a),
    }
}

/// Runs a parsed configuration.
pub fn run(config: &RunConfig) -> RunOutcome {
    let report = execute(config).and_then(|r| {
        let stdout = match config.format {
            Format::Json => format!("{}\n", r.json),
            Format::Csv => render_csv(&r.table)?,
            Format::Pretty => {
                let mut s = String::new();
                render_pretty(&r.value, 0, &mut s);
                s
            }
        };
        Ok((r.exit_code, stdout, r.note))
    });
    match report {
        Ok((exit_code, stdout, note)) => RunOutcome {
            exit_code,
            stdout,
            stderr: note.map(|n| format!("hmm-analytic: {n}\n")).unwrap_or_default(),
        },
        Err(Failure::Malformed(msg)) => {
            RunOutcome { exit_code: EXIT_MALFORMED, stdout: String::new(), stderr: format!("hmm-analytic: error: {msg}\n") }
        }
    }
}

/// Parses `args` (including the program name) and runs them. Usage errors
/// exit with 1; `--help` and `--version` print to standard output.
pub fn run_args<I, T>(args: I) -> RunOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match RunConfig::try_parse_from(args) {
        Ok(config) => run(&config),
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                RunOutcome { exit_code: EXIT_MALFORMED, stdout: String::new(), stderr: text }
            } else {
                RunOutcome { exit_code: EXIT_OK, stdout: text, stderr: String::new() }
            }
        }
    }
}
