//! `cf`: generate counterfactuals, run the exhaustive oracle or the
//! benchmark grid, export LP files and serve the HTTP API.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scorecf::bench::{render_csv, run_bench, BenchConfig};
use scorecf::engine::{build_model, prepare, render_oracle, render_table, run, run_oracle};
use scorecf::milp::{write_lp, MilpStatus};
use scorecf::oracle::OracleStatus;
use scorecf::query::{HardRule, Method, QueryDoc};
use scorecf::scorecard::Scorecard;
use scorecf::stats::Dataset;
use scorecf::{Error, Result};
use scorecf_service::Limits;

const EXIT_OK: u8 = 0;
const EXIT_INTERNAL: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_LIMIT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cf",
    version,
    about = "Optimal, sparse and diverse counterfactuals for scorecard models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scorecard document (JSON).
    #[arg(long, global = true)]
    scorecard: Option<PathBuf>,
    /// Query document (JSON).
    #[arg(long, global = true)]
    query: Option<PathBuf>,
    /// Sample data: CSV with a header row of feature names, values in
    /// transform space.
    #[arg(long, global = true)]
    stats_data: Option<PathBuf>,
    /// Solver time limit in seconds, used when the query sets none.
    #[arg(long, global = true, default_value_t = 30.0)]
    time_limit: f64,
    /// Seed of the synthetic benchmark instance.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Hard {
    Features,
    Values,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a query and print the counterfactual report.
    Generate,
    /// Enumerate every assignment of a small query and print the optimum.
    Oracle,
    /// Run a grid of multi-counterfactual queries on a synthetic instance.
    Bench(BenchArgs),
    /// Write the model of a query in LP format.
    DumpLp {
        /// Output file; standard output when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8700)]
        port: u16,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 12)]
    features: usize,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long = "k", value_delimiter = ',', default_values_t = [3, 4])]
    ks: Vec<usize>,
    #[arg(long = "theta", value_delimiter = ',', default_values_t = [2, 3])]
    thetas: Vec<usize>,
    #[arg(long = "method", value_delimiter = ',', default_values = ["weighted"])]
    methods: Vec<Method>,
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["features", "values"])]
    hard: Vec<Hard>,
    /// Proximity, closeness and outcome-gap weights.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.0, 0.0])]
    lambdas: Vec<f64>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Argument(format!("--{flag} is required")))
}

struct Inputs {
    scorecard: Scorecard,
    query: QueryDoc,
    data: Option<Dataset>,
}

fn load(c: &Common) -> Result<Inputs> {
    let scorecard = Scorecard::from_json(&read(required(&c.scorecard, "scorecard")?)?)?;
    let query = QueryDoc::from_json(&read(required(&c.query, "query")?)?)?;
    let data = match &c.stats_data {
        None => None,
        Some(p) => Some(Dataset::from_csv(read(p)?.as_bytes())?),
    };
    Ok(Inputs { scorecard, query, data })
}

fn status_code(status: MilpStatus) -> u8 {
    match status {
        MilpStatus::Optimal | MilpStatus::Feasible => EXIT_OK,
        MilpStatus::Infeasible => EXIT_INFEASIBLE,
        MilpStatus::TimeLimit => EXIT_LIMIT,
        MilpStatus::Unbounded => EXIT_INTERNAL,
    }
}

fn generate(c: &Common) -> Result<u8> {
    let inp = load(c)?;
    let report = run(
        &inp.scorecard,
        inp.data.as_ref(),
        &inp.query,
        c.time_limit,
        f64::INFINITY,
    )?;
    match c.format {
        Format::Table => emit(&render_table(&report)),
        Format::Json => emit(&(report.to_json() + "\n")),
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(status_code(report.status))
}

fn oracle(c: &Common) -> Result<u8> {
    let inp = load(c)?;
    let result = run_oracle(&inp.scorecard, inp.data.as_ref(), &inp.query)?;
    match c.format {
        Format::Table => emit(&render_oracle(&inp.scorecard, &result)),
        Format::Json => emit(&(serde_json::to_string_pretty(&result).expect("oracle result serializes") + "\n")),
    }
    Ok(match result.status {
        OracleStatus::Optimal => EXIT_OK,
        OracleStatus::Infeasible => EXIT_INFEASIBLE,
    })
}

fn bench(c: &Common, args: &BenchArgs) -> Result<u8> {
    let cfg = BenchConfig {
        seed: c.seed,
        features: args.features,
        bins: args.bins,
        ks: args.ks.clone(),
        thetas: args.thetas.clone(),
        methods: args.methods.clone(),
        hard: args
            .hard
            .iter()
            .filter_map(|h| match h {
                Hard::Features => Some(HardRule::Features),
                Hard::Values => Some(HardRule::Values),
                Hard::None => None,
            })
            .collect(),
        lambdas: args.lambdas.clone(),
        time_limit: c.time_limit,
    };
    let rows = run_bench(&cfg)?;
    match c.format {
        Format::Table => emit(&render_csv(&rows)),
        Format::Json => emit(&(serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n")),
    }
    Ok(EXIT_OK)
}

fn dump_lp(c: &Common, output: Option<&Path>) -> Result<u8> {
    let inp = load(c)?;
    let prepared = prepare(&inp.scorecard, inp.data.as_ref(), &inp.query)?;
    let model = build_model(&inp.scorecard, &prepared)?;
    let text = write_lp(&model.model);
    match output {
        None => emit(&text),
        Some(p) => std::fs::write(p, text)?,
    }
    Ok(EXIT_OK)
}

fn serve(host: IpAddr, port: u16) -> Result<u8> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(scorecf_service::serve(SocketAddr::new(host, port), Limits::default()))?;
    Ok(EXIT_OK)
}

/// Writes to stdout; a closed pipe (`cf ... | head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let outcome = match &cli.command {
        Command::Generate => generate(c),
        Command::Oracle => oracle(c),
        Command::Bench(args) => bench(c, args),
        Command::DumpLp { output } => dump_lp(c, output.as_deref()),
        Command::Serve { host, port } => serve(*host, *port),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_INTERNAL })
        }
    }
}
