//! Command-line front end.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 data or
//! configuration error, 3 a method failed.

mod input;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fewtreated::mc::{
    figure1_checks, reproduce_figure1, reproduce_table1, run_rejection_study_with_progress, table1_checks, Check,
    Figure1Options, Scenario, FIGURE1_REPS_FLOOR,
};
use fewtreated::{Error, Method, MethodConfig, Outcome, Tail};

#[derive(Parser)]
#[command(name = "fewtreated", version, about = "Inference with few treated units")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run tests on a panel CSV.
    Analyze(AnalyzeArgs),
    /// Monte Carlo rejection study on the AR(1) design.
    Simulate(SimulateArgs),
    /// Regenerate a published table or figure.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct OutputArgs {
    /// Base seed; a random one is drawn and reported when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Method id, repeatable or comma separated.
    #[arg(long = "method", required = true, value_delimiter = ',')]
    methods: Vec<String>,
    /// Hypothesized effect.
    #[arg(long = "null", default_value_t = 0.0, allow_hyphen_values = true)]
    null: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    #[arg(long, default_value_t = 100)]
    partitions: usize,
    /// left, right or both.
    #[arg(long, default_value = "both")]
    tail: String,
    /// Column holding the 0/1 balance flag of the conditional test.
    #[arg(long)]
    balance: Option<String>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// key=value scenario file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    t0: Option<usize>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    effect: Option<f64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Table1,
    Figure1,
}

#[derive(Args)]
struct ReproduceArgs {
    target: Target,
    /// Defaults to 100000 for table1 and 2000 for figure1.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 100)]
    partitions: usize,
    #[command(flatten)]
    out: OutputArgs,
}

enum Fail {
    Io(String),
    Data(String),
    Method(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let msg = format!("{}: {e}", e.code());
        if e.is_data_error() || matches!(e, Error::Invalid(_)) {
            Fail::Data(msg)
        } else {
            Fail::Method(msg)
        }
    }
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn check_alpha(alpha: f64) -> Result<(), Fail> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Fail::Data(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn emit(out: &OutputArgs, body: String) -> Result<(), Fail> {
    match &out.output {
        Some(p) => fs::write(p, body).map_err(|e| Fail::Io(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(body.as_bytes()).map_err(|e| Fail::Io(e.to_string())),
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("flat record");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
}

/// One analysis record, with the run seed so it can be repeated exactly.
#[derive(Serialize)]
struct Record {
    run_seed: u64,
    #[serde(flatten)]
    outcome: Outcome,
}

#[derive(Serialize)]
struct CsvRecord {
    method: String,
    kind: &'static str,
    p_value: Option<f64>,
    statistic: Option<f64>,
    c0: Option<f64>,
    ref_size: Option<usize>,
    enumerated: Option<bool>,
    critical_value: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    level: Option<f64>,
    estimate: Option<f64>,
    adjusted: Option<f64>,
    warnings: String,
    run_seed: u64,
}

impl CsvRecord {
    fn new(o: &Outcome, run_seed: u64) -> Self {
        let mut r = CsvRecord {
            method: o.method().to_string(),
            kind: "test",
            p_value: None,
            statistic: None,
            c0: None,
            ref_size: None,
            enumerated: None,
            critical_value: None,
            lower: None,
            upper: None,
            level: None,
            estimate: None,
            adjusted: None,
            warnings: String::new(),
            run_seed,
        };
        match o {
            Outcome::Test(t) => {
                r.p_value = Some(t.p_value);
                r.statistic = Some(t.statistic);
                r.c0 = Some(t.c0);
                r.ref_size = t.ref_size;
                r.enumerated = Some(t.enumerated);
                r.critical_value = t.critical_value;
                r.warnings = t.warnings.join("; ");
            }
            Outcome::Interval(i) => {
                r.kind = "interval";
                r.lower = Some(i.lower);
                r.upper = Some(i.upper);
                r.level = Some(i.level);
                r.estimate = Some(i.estimate);
                r.warnings = i.warnings.join("; ");
            }
            Outcome::Estimate(e) => {
                r.kind = "estimate";
                r.estimate = Some(e.estimate);
                r.adjusted = Some(e.adjusted);
            }
        }
        r
    }
}

fn analyze(a: AnalyzeArgs) -> Result<(), Fail> {
    check_alpha(a.alpha)?;
    let methods = a.methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
    let tail: Tail = a.tail.parse().map_err(Fail::Data)?;
    let data = input::read_panel(&a.input, a.balance.as_deref())?;
    let seed = seed_or_random(a.out.seed);
    let cfg = MethodConfig {
        alpha: a.alpha,
        c: a.null,
        budget: a.budget,
        seed,
        tail,
        partitions: a.partitions,
        balance: data.balance,
        m_hat: data.m_hat,
    };
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for m in methods {
        match m.run(&data.panel, &cfg) {
            Ok(o) => records.push(o),
            Err(e) if e.is_data_error() => return Err(e.into()),
            Err(e) => {
                eprintln!("{m}: {}: {e}", e.code());
                failed.push(m.id());
            }
        }
    }
    let body = match a.out.format {
        Format::Json => to_json(&records.into_iter().map(|outcome| Record { run_seed: seed, outcome }).collect::<Vec<_>>()),
        Format::Csv => to_csv(&records.iter().map(|o| CsvRecord::new(o, seed)).collect::<Vec<_>>()),
    };
    emit(&a.out, body)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Fail::Method(format!("failed methods: {}", failed.join(", "))))
    }
}

fn simulate(a: SimulateArgs) -> Result<(), Fail> {
    let mut scen = Scenario::default();
    let mut file_seed = false;
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).map_err(|e| Fail::Data(format!("{}: {e}", p.display())))?;
        scen.apply_kv(&text)?;
        file_seed = text.lines().any(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == "seed"));
    }
    if !a.methods.is_empty() {
        scen.methods = a.methods.clone();
    }
    macro_rules! over {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { scen.$f = v; })* };
    }
    over!(reps, alpha, budget, partitions, n0, n1, t0, t1, rho, effect);
    scen.seed = match a.out.seed {
        Some(s) => s,
        None if file_seed => scen.seed,
        None => seed_or_random(None),
    };
    scen.validate()?;
    for m in &scen.methods {
        m.parse::<Method>()?;
    }
    let res = run_rejection_study_with_progress(&scen, &|k, n| eprint!("\rprogress {k}/{n}"))?;
    eprintln!("\rdone in {:.2}s", res.elapsed_secs);
    let body = match a.out.format {
        Format::Json => to_json(&res),
        Format::Csv => to_csv(&res.rows()),
    };
    emit(&a.out, body)
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn reproduce(a: ReproduceArgs) -> Result<(), Fail> {
    let seed = seed_or_random(a.out.seed);
    match a.target {
        Target::Table1 => {
            let rows = reproduce_table1(a.reps.unwrap_or(100_000), seed)?;
            print_checks(&table1_checks(&rows));
            let body = match a.out.format {
                Format::Json => to_json(&rows),
                Format::Csv => to_csv(&rows),
            };
            emit(&a.out, body)
        }
        Target::Figure1 => {
            let mut opts = Figure1Options::new(a.reps.unwrap_or(FIGURE1_REPS_FLOOR), seed);
            opts.budget = a.budget;
            opts.partitions = a.partitions;
            let rows = reproduce_figure1(&opts, &|n1, effect| eprintln!("n1={n1} effect={effect}"))?;
            print_checks(&figure1_checks(&rows));
            let body = match a.out.format {
                Format::Json => to_json(&rows),
                Format::Csv => to_csv(&rows),
            };
            emit(&a.out, body)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Analyze(a) => analyze(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Reproduce(a) => reproduce(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Method(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
