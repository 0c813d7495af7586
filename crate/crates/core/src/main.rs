use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use handoff_sim::metrics::{
    create_dir, latency_series_csv, overlap_required, results_csv, results_json, summarize,
    write_file, RunReport,
};
use handoff_sim::scenario::{run_batch, RunOptions, Scenario, ScenarioConfig, Scheme};

#[derive(Parser)]
#[command(
    name = "handoff-sim",
    version,
    about = "Dual-radio 802.11 handoff simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more runs and report latency and loss.
    Run(RunArgs),
    /// Cell overlap needed to finish a handoff before leaving the old cell.
    Overlap {
        #[arg(long)]
        speed_kmph: f64,
        #[arg(long)]
        latency_ms: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Dual,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the first run; run i uses seed + i. Defaults to the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, value_enum, default_value = "dual")]
    scheme: SchemeArg,
    /// Overrides the mobility speed.
    #[arg(long)]
    speed_kmph: Option<f64>,
    /// Directory for result files; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write a control-message trace per run (requires --out).
    #[arg(long)]
    trace: bool,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_FAULT: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Overlap {
            speed_kmph,
            latency_ms,
        } => {
            println!("{:.3}", overlap_required(speed_kmph, latency_ms));
            ExitCode::SUCCESS
        }
        Command::Run(args) => run(args),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let config = match &args.config {
        Some(path) => match ScenarioConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => ScenarioConfig::default(),
    };
    let mut config = config;
    if let Some(v) = args.speed_kmph {
        config.mobility.speed_kmph = v;
    }
    let scenario = match Scenario::new(config) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if args.trace && args.out.is_none() {
        return fail(EXIT_CONFIG, "--trace requires --out");
    }
    let scheme = match args.scheme {
        SchemeArg::Dual => Scheme::Dual,
        SchemeArg::Baseline => Scheme::Baseline,
    };
    let seed = args.seed.unwrap_or(scenario.config.seed);
    let opts = RunOptions {
        trace: args.trace,
        ..RunOptions::default()
    };
    let outputs = match run_batch(&scenario, scheme, seed, args.runs, &opts) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_FAULT, e),
    };
    let reports: Vec<RunReport> = outputs.iter().map(|o| o.report.clone()).collect();
    let summary = summarize(&reports);
    let results = match args.format {
        Format::Csv => results_csv(&reports, &summary),
        Format::Json => results_json(&reports, &summary),
    };

    let Some(dir) = args.out else {
        print!("{results}");
        return ExitCode::SUCCESS;
    };
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let mut files = vec![
        (dir.join(format!("results.{ext}")), results),
        (dir.join("latencies.csv"), latency_series_csv(&reports)),
    ];
    for o in &outputs {
        if let Some(trace) = &o.trace {
            let mut text = trace.join("\n");
            text.push('\n');
            files.push((dir.join(format!("trace-run{}.txt", o.report.run)), text));
        }
    }
    if let Err(e) = create_dir(&dir) {
        return fail(EXIT_CONFIG, e);
    }
    for (path, text) in files {
        if let Err(e) = write_file(&path, &text) {
            return fail(EXIT_CONFIG, e);
        }
    }
    eprintln!(
        "{} runs, {} handoffs, mean latency {} ms, loss {}/{}",
        summary.runs,
        summary.handoffs,
        summary
            .latency
            .mean_ms
            .map_or("NA".into(), |m| format!("{m:.3}")),
        summary.loss.lost,
        summary.loss.sent
    );
    ExitCode::SUCCESS
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}
