use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use simmimo::experiment::{self, Scenario};

#[derive(Parser)]
#[command(
    name = "simmimo",
    version,
    about = "Mutual information, outage and DMT of SIM-assisted MIMO links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario named in the config.
    Run(RunArgs),
    /// Compare analytic phase gradients against finite differences.
    CheckGrad(RunArgs),
    /// Compare the closed forms against Monte Carlo.
    McVerify(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `mc.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "SIMMIMO_THREADS", default_value_t = 0)]
    threads: usize,
}

fn execute(args: RunArgs, forced: Option<Scenario>) -> simmimo::Result<bool> {
    let mut cfg = experiment::load_config(&args.config)?;
    if let Some(s) = forced {
        cfg.scenario = s;
    }
    if let Some(seed) = args.seed {
        cfg.mc.seed = seed;
    }
    if args.threads > 0 {
        // Fails only if the pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global();
    }
    let start = Instant::now();
    let report = experiment::run(&cfg)?;
    // The manifest echoes the config as written, so `--out` stays out of it.
    let dir = args.out.unwrap_or_else(|| cfg.output.clone());
    let files = report.write(&dir, start.elapsed().as_secs_f64(), rayon::current_num_threads())?;
    print!("{}", experiment::summary(&report));
    if forced == Some(Scenario::CheckGrad) {
        print!("{}", report.csv());
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => execute(a, None),
        Command::CheckGrad(a) => execute(a, Some(Scenario::CheckGrad)),
        Command::McVerify(a) => execute(a, Some(Scenario::McVerify)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
