use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fas_optim::harness::{
    lemmas, run_experiment, validate_closed_form, Algorithm, GradInit, RunOptions, SweepSpec,
};
use fas_optim::opt_grad::GradSettings;
use fas_optim::scenario::{derive_seed, load_scenario};

const EXIT_VALIDATION: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "fas-optim", version, about = "Fluid-antenna placement for max-min uplink rate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run optimizers over a parameter sweep and write CSV and SVG results.
    Run(RunArgs),
    /// Compare the closed-form SINR terms with Monte Carlo.
    Validate(ValidateArgs),
    /// Check the random-matrix identities behind the closed form.
    Lemmas(LemmaArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// `axis=v1,v2,...` with axis one of k_users, m_antennas, rician_db,
    /// region_over_lambda; or `none`.
    #[arg(long, default_value = "none")]
    sweep: String,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value = "ga,grad,fpa")]
    algos: String,
    /// Master seed; defaults to the scenario's `hyper.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Gradient start: spread, upa or random.
    #[arg(long, default_value = "spread")]
    grad_init: String,
    /// Disable Nesterov momentum.
    #[arg(long)]
    no_momentum: bool,
    /// Also estimate every returned layout's min-rate by Monte Carlo.
    #[arg(long)]
    mc_trials: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1_000_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FAS_OPTIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("FAS_OPTIM_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(args: RunArgs) -> Result<bool> {
    let (axis, values) = SweepSpec::parse_axis(&args.sweep)?;
    let spec = SweepSpec {
        axis,
        values,
        repeats: args.repeats,
        algorithms: Algorithm::parse_list(&args.algos)?,
    };
    spec.validate()?;
    let options = RunOptions {
        grad: GradSettings {
            accelerated: !args.no_momentum,
            ..GradSettings::default()
        },
        grad_init: args.grad_init.parse::<GradInit>()?,
        mc_trials: args.mc_trials,
        ..RunOptions::default()
    };
    let out = run_experiment(&args.scenario, &spec, args.seed, &args.out, &options)?;
    println!(
        "{:<20} {:>6} {:>8} {:>10} {:>8} {:>8}",
        spec.axis.name(),
        "algo",
        "repeats",
        "min rate",
        "se",
        "iters"
    );
    for s in &out.summary {
        let value = s.axis_value.map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<20} {:>6} {:>8} {:>10.4} {:>8.4} {:>8.1}",
            value, s.algorithm, s.repeats, s.mean_min_rate, s.se_min_rate, s.mean_iterations
        );
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(true)
}

fn validate(args: ValidateArgs) -> Result<bool> {
    let scenario = load_scenario(&args.scenario)?;
    let layout = scenario.upa()?;
    let seed = args.seed.unwrap_or(derive_seed(scenario.hyper.seed, 0x4d43));
    let report = validate_closed_form(&scenario, &layout, args.trials, seed)?;
    print!("{}", report.table());
    println!(
        "max |z| = {:.2}, max relative error = {:.3}%",
        report.max_z(),
        100.0 * report.max_rel_err()
    );
    if report.passed() {
        println!("PASS: every term within 4 standard errors");
    } else {
        println!("FAIL: some term deviates by more than 4 standard errors");
    }
    Ok(report.passed())
}

fn lemma(args: LemmaArgs) -> Result<bool> {
    let (report, verdict) = lemmas(args.m, args.trials, args.seed)?;
    println!("M = {}, {} samples", report.m, report.trials);
    println!(
        "E|h|^4 / (M^2 + M)      = {:.5} (+- {:.5})",
        verdict.fourth_moment_ratio,
        report.fourth_moment.std_err / report.fourth_moment.expected
    );
    println!("E[XAX^H] diag rel err   = {:.4}%", 100.0 * verdict.max_diag_rel_err);
    println!("E[XAX^H] offdiag max |z| = {:.2}", verdict.max_offdiag_z);
    println!("E[u1^H h u2^H h] max |z| = {:.2}", verdict.max_cross_z);
    println!("{}", if verdict.passed() { "PASS" } else { "FAIL" });
    Ok(verdict.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
        Command::Lemmas(args) => lemma(args),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
