use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpco::harness::{run_experiment, ExperimentConfig, HarnessError, Mode, Summary};

#[derive(Parser)]
#[command(name = "dpco", version, about = "Private consensus and primal-dual optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Private constrained consensus runs.
    Consensus(RunArgs),
    /// Private distributed optimizer runs against the centralized reference.
    Optimize(RunArgs),
    /// Proposed method against the noiseless and geometric-step baselines.
    Compare(RunArgs),
    /// Sensitivity and privacy-budget table for the configured schedules.
    Accountant(RunArgs),
    /// Centralized saddle point and optimality report.
    Oracle(RunArgs),
    /// Parse and validate a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        /// Mode to validate against when the file declares none.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config.
    #[arg(long, env = "DPCO_OUT_DIR")]
    out: Option<PathBuf>,
    /// Number of seeded runs.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Run even when the schedule certificates fail.
    #[arg(long)]
    override_certificates: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "consensus" => Ok(Mode::Consensus),
        "optimize" => Ok(Mode::Optimize),
        "compare" => Ok(Mode::Compare),
        "accountant" => Ok(Mode::Accountant),
        "oracle" => Ok(Mode::Oracle),
        other => Err(format!("unknown mode {other:?}")),
    }
}

fn load(args: &RunArgs, mode: Mode) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::load(&args.config)?.with_mode(mode)?;
    if let Some(out) = &args.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(n) = args.seeds {
        config.seeds = n;
    }
    if let Some(n) = args.workers {
        config.workers = Some(n);
    }
    if args.override_certificates {
        config.override_certificates = true;
    }
    Ok(config)
}

fn report(summary: &Summary, out: &std::path::Path) {
    println!("mode {} config {}", summary.mode, &summary.config_hash[..16]);
    if summary.completed + summary.failed > 0 {
        println!("runs: {} completed, {} failed", summary.completed, summary.failed);
    }
    for (method, s) in &summary.final_error {
        println!("{method}: final error mean {:.6e} median {:.6e}", s.mean, s.median);
    }
    for (name, e) in &summary.eps_hat {
        println!("{name}: eps_hat {e:.6}");
    }
    for c in summary.certificates.iter().filter(|c| !c.valid()) {
        println!("warning: certificate {} failed: {}", c.kind, c.failed().join("; "));
    }
    println!("output written to {}", out.display());
}

fn run(args: RunArgs, mode: Mode) -> Result<ExitCode, HarnessError> {
    let config = load(&args, mode)?;
    let summary = run_experiment(&config)?;
    report(&summary, config.out_dir.as_deref().unwrap_or(std::path::Path::new("out")));
    Ok(if summary.failed > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Consensus(a) => run(a, Mode::Consensus),
        Command::Optimize(a) => run(a, Mode::Optimize),
        Command::Compare(a) => run(a, Mode::Compare),
        Command::Accountant(a) => run(a, Mode::Accountant),
        Command::Oracle(a) => run(a, Mode::Oracle),
        Command::ValidateConfig { config, mode } => ExperimentConfig::load(&config).and_then(|c| {
            let c = match mode {
                Some(m) => c.with_mode(m)?,
                None => c,
            };
            c.validate()?;
            println!("{}: valid ({}), hash {}", config.display(), c.mode()?.name(), c.hash());
            Ok(ExitCode::SUCCESS)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
