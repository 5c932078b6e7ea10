// SPDX-License-Identifier: MIT OR Apache-2.0

//! `segline` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use segline::detect::{detect, select_pn, DetectorConfig, PnChoice};
use segline::harness::{
    load_csv, report_json, result_json, run_replications, simulate_dataset, write_csv, write_json, CsvOptions, Scenario,
};
use segline::{make_segmentation, Algorithm, Dataset, SeglineError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "segline",
    version,
    about = "Multiple change-point detection in segmented linear regression"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect change points in a CSV dataset.
    Detect(DetectArgs),
    /// Write a simulated dataset to CSV.
    Simulate(SimulateArgs),
    /// Run seeded replications and write a summary report.
    Bench(BenchArgs),
    /// Choose the number of boundaries by refit RSS.
    SelectPn(SelectArgs),
}

#[derive(Args)]
struct InputArgs {
    /// CSV file, one observation per row.
    input: PathBuf,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// 1-based column holding the response.
    #[arg(long, default_value_t = 1)]
    response_column: usize,
    /// Prepend a constant predictor (use alone for a mean-shift model).
    #[arg(long)]
    intercept: bool,
}

#[derive(Args)]
struct TuningArgs {
    /// JSON file with detector settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Significance level of the boundary tests.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Detector: ls, cls, al, cal, scad or mcp.
    #[arg(short, long, default_value = "al")]
    algorithm: Algorithm,
    /// Number of boundaries, or `auto` for floor(n / 50).
    #[arg(long, value_parser = parse_pn, conflicts_with = "pn_range")]
    pn: Option<PnChoice>,
    /// Pick the number of boundaries from LO..HI by refit RSS.
    #[arg(long, value_parser = parse_range)]
    pn_range: Option<PnList>,
    /// Output file; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Report null runtimes so output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ScenarioArgs {
    /// none, cpl1, cpl2, or a JSON scenario file.
    #[arg(long, default_value = "cpl1")]
    scenario: String,
    /// Standard deviation of the random predictors.
    #[arg(long)]
    predictor_sd: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Number of replications.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Comma-separated detectors.
    #[arg(long, value_delimiter = ',', default_value = "ls,cls,al,cal,scad,mcp")]
    algorithms: Vec<Algorithm>,
    /// Replication `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of boundaries, or `auto` for floor(n / 50).
    #[arg(long, value_parser = parse_pn)]
    pn: Option<PnChoice>,
    /// Report file; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report null runtimes so output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Detector: ls, cls, al, cal, scad or mcp.
    #[arg(short, long, default_value = "al")]
    algorithm: Algorithm,
    /// Candidates as a list `3,5,8` or a range `3..13`.
    #[arg(long, value_parser = parse_candidates)]
    candidates: PnList,
    /// Output file; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Report null runtimes so output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

/// Boundary-count candidates.
#[derive(Clone, Debug)]
struct PnList(Vec<usize>);

fn parse_pn(s: &str) -> Result<PnChoice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(PnChoice::Auto);
    }
    match s.parse::<usize>() {
        Ok(p) if p >= 1 => Ok(PnChoice::Fixed(p)),
        _ => Err(format!("expected a positive integer or 'auto', got '{s}'")),
    }
}

fn parse_range(s: &str) -> Result<PnList, String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected LO..HI, got '{s}'"))?;
    let lo: usize = lo.trim().parse().map_err(|_| format!("bad lower bound in '{s}'"))?;
    let hi: usize = hi.trim().parse().map_err(|_| format!("bad upper bound in '{s}'"))?;
    if lo == 0 || lo > hi {
        return Err(format!("empty or invalid range '{s}'"));
    }
    Ok(PnList((lo..=hi).collect()))
}

fn parse_candidates(s: &str) -> Result<PnList, String> {
    if s.contains("..") {
        return parse_range(s);
    }
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(p) if p >= 1 => Ok(p),
            _ => Err(format!("bad candidate '{t}'")),
        })
        .collect::<Result<_, _>>()
        .map(PnList)
}

fn exit_code(e: &SeglineError) -> u8 {
    match e {
        SeglineError::InvalidInput(_) => EXIT_USAGE,
        SeglineError::Infeasible(_) | SeglineError::Data(_) | SeglineError::Io(_) => EXIT_DATA,
        SeglineError::Numerical(_) => EXIT_NUMERICAL,
    }
}

fn load_config(t: &TuningArgs) -> Result<DetectorConfig, SeglineError> {
    let mut cfg = match &t.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| SeglineError::invalid_input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| SeglineError::invalid_input(format!("{}: {e}", path.display())))?
        }
        None => DetectorConfig::default(),
    };
    if let Some(a) = t.alpha {
        cfg.alpha = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_input(a: &InputArgs) -> Result<Dataset, SeglineError> {
    if a.response_column == 0 {
        return Err(SeglineError::invalid_input("--response-column is 1-based"));
    }
    let opts = CsvOptions {
        has_header: !a.no_header,
        response_column: a.response_column - 1,
        intercept: a.intercept,
    };
    load_csv(&a.input, &opts)
}

fn load_scenario(a: &ScenarioArgs) -> Result<Scenario, SeglineError> {
    let mut s = match Scenario::named(&a.scenario) {
        Ok(s) => s,
        Err(_) if Path::new(&a.scenario).is_file() => {
            let text = fs::read_to_string(&a.scenario)
                .map_err(|e| SeglineError::data(format!("cannot read {}: {e}", a.scenario)))?;
            serde_json::from_str(&text).map_err(|e| SeglineError::data(format!("{}: {e}", a.scenario)))?
        }
        Err(e) => return Err(e),
    };
    if let Some(sd) = a.predictor_sd {
        s = s.with_predictor_sd(sd);
    }
    if let Some(sigma) = a.sigma {
        s = s.with_sigma(sigma);
    }
    s.validate()?;
    Ok(s)
}

fn result_document(
    data: &Dataset,
    result: &segline::DetectionResult,
    cfg: &DetectorConfig,
    timing: bool,
) -> Result<Value, SeglineError> {
    let p_n = match cfg.p_n {
        PnChoice::Fixed(p) => p,
        auto => auto.resolve(data.n()),
    };
    let seg = make_segmentation(data.n(), p_n, data.q())?;
    Ok(result_json(result, data, &seg, cfg, timing))
}

fn run_detect(a: DetectArgs) -> Result<(), SeglineError> {
    let mut cfg = load_config(&a.tuning)?;
    if let Some(pn) = a.pn {
        cfg.p_n = pn;
    }
    let data = load_input(&a.input)?;
    log::info!("loaded {} observations with {} predictors", data.n(), data.q());
    let (result, cfg) = match &a.pn_range {
        Some(range) => {
            let sel = select_pn(&data, a.algorithm, &range.0, &cfg)?;
            for (p, rss) in &sel.scores {
                log::info!("p_n = {p}: rss {rss:?}");
            }
            (sel.result, cfg.with_pn(sel.p_n))
        }
        None => (detect(&data, a.algorithm, &cfg)?, cfg),
    };
    let doc = result_document(&data, &result, &cfg, !a.no_timing)?;
    write_json(a.output.as_deref(), &doc)
}

fn run_simulate(a: SimulateArgs) -> Result<(), SeglineError> {
    let s = load_scenario(&a.scenario)?.with_seed(a.seed);
    let (data, truth) = simulate_dataset(&s)?;
    write_csv(&a.out, &data)?;
    log::info!("wrote {} rows with changes at {:?}", data.n(), truth.locations);
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<(), SeglineError> {
    let mut cfg = load_config(&a.tuning)?;
    if let Some(pn) = a.pn {
        cfg.p_n = pn;
    }
    if a.algorithms.is_empty() {
        return Err(SeglineError::invalid_input("no algorithms given"));
    }
    let s = load_scenario(&a.scenario)?;
    let report = run_replications(&s, &a.algorithms, a.reps, a.seed, &cfg)?;
    for summary in &report.algorithms {
        let within10: Vec<usize> = summary.hits.iter().map(|h| h[2]).collect();
        eprintln!(
            "{:>4}  correct {:>4}/{}  within 10 {:?}",
            summary.algorithm, summary.correct_k, report.replications, within10
        );
    }
    write_json(a.report.as_deref(), &report_json(&report, !a.no_timing))
}

fn run_select(a: SelectArgs) -> Result<(), SeglineError> {
    let cfg = load_config(&a.tuning)?;
    let data = load_input(&a.input)?;
    let sel = select_pn(&data, a.algorithm, &a.candidates.0, &cfg)?;
    let cfg = cfg.with_pn(sel.p_n);
    let scores: Vec<Value> = sel
        .scores
        .iter()
        .map(|(p, rss)| json!({ "p_n": p, "rss": rss }))
        .collect();
    let doc = json!({
        "p_n": sel.p_n,
        "scores": scores,
        "result": result_document(&data, &sel.result, &cfg, !a.no_timing)?,
    });
    write_json(a.output.as_deref(), &doc)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Detect(a) => run_detect(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Bench(a) => run_bench(a),
        Command::SelectPn(a) => run_select(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
