use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use lm2m_bench::{
    format_report, parse_sizes, read_csv, report, run_scenario, write_csv, BenchScenario, Profile, ScenarioName,
};
use tracing_subscriber::EnvFilter;

/// Measures registration, ledger mutation, login and anomaly query latency
/// and writes `scenario,size,rep,elapsed_ms` rows.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Scenario name, or `all`.
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Comma-separated ascending store sizes.
    #[arg(long, default_value = "100,200,300,400,500")]
    sizes: String,
    /// Repetitions per size.
    #[arg(long, default_value_t = BenchScenario::DEFAULT_REPETITIONS)]
    reps: u32,
    /// Chain timing: `desk` or `paper-emulation`.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summarize an existing CSV instead of measuring.
    #[arg(long, conflicts_with = "out")]
    report: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();

    if let Some(path) = &args.report {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let rows = read_csv(file).context("reading csv")?;
        print!("{}", format_report(&report(&rows)?));
        return Ok(());
    }

    let names = if args.scenario.eq_ignore_ascii_case("all") {
        ScenarioName::ALL.to_vec()
    } else {
        vec![args.scenario.parse::<ScenarioName>()?]
    };
    let sizes = parse_sizes(&args.sizes)?;
    let profile: Profile = args.profile.parse()?;

    let mut rows = Vec::new();
    for name in names {
        let scenario = BenchScenario::new(name, sizes.clone(), args.reps, profile)?;
        rows.extend(run_scenario(&scenario).await.with_context(|| format!("scenario {name}"))?);
    }

    match &args.out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(BufWriter::new(file), &rows)?;
            eprint!("{}", format_report(&report(&rows)?));
        }
        None => write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}
