use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adsmc::harness::export::{export_ab, export_result, write_sweep_summary, TraceFormat};
use adsmc::harness::{run_ab, run_scenario_with, run_sweep, HarnessError, RunOptions, Scenario, ScenarioResult};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Closed-loop simulator for adaptive sliding-mode control with ADC
/// uncertainty compensation.
#[derive(Parser)]
#[command(name = "adsmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario twice, without and with ADC compensation, and compare.
    Ab {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every *.toml scenario in a directory.
    Sweep {
        dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Output directory (defaults to the scenario's output.dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace file format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Start of the metrics window in seconds.
    #[arg(long)]
    skip_settle: Option<f64>,
    /// Abort on any estimate clamp or Lyapunov monitor violation.
    #[arg(long)]
    strict_invariants: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions { skip_settle_s: self.skip_settle, strict_invariants: self.strict_invariants }
    }

    fn format(&self) -> TraceFormat {
        match self.format {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }

    fn out_dir(&self, sc: Option<&Scenario>) -> PathBuf {
        self.out.clone().or_else(|| sc.and_then(|s| s.output.dir.as_ref()).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn print_metrics(r: &ScenarioResult) {
    for sig in &r.signals {
        match r.metric(&sig.name) {
            Some(m) => println!("  {:<8} mean|e| = {:<12.6e} std(e) = {:.6e}", sig.name, m.mean_abs_error, m.std_error),
            None => println!("  {:<8} (no samples after {} s)", sig.name, r.skip_settle_s),
        }
    }
    let e = r.events;
    if e.plant_clamps + e.actuator_saturations + e.estimate_clamps + e.lyapunov_violations > 0 {
        println!(
            "  events: {} plant clamps, {} actuator saturations, {} estimate clamps, {} Lyapunov violations",
            e.plant_clamps, e.actuator_saturations, e.estimate_clamps, e.lyapunov_violations
        );
    }
}

fn run(path: &Path, common: &Common) -> Result<(), HarnessError> {
    let sc = Scenario::load(path)?;
    let r = run_scenario_with(&sc, &common.options())?;
    let files = export_result(&r, &common.out_dir(Some(&sc)), common.format())?;
    println!("{} ({} steps)", r.name, r.trace.len());
    print_metrics(&r);
    println!("  wrote {}", files.traces[0].display());
    Ok(())
}

fn ab(path: &Path, common: &Common) -> Result<(), HarnessError> {
    let sc = Scenario::load(path)?;
    let report = run_ab(&sc, &common.options())?;
    let files = export_ab(&report, &common.out_dir(Some(&sc)), common.format())?;
    for r in [&report.baseline, &report.compensated] {
        println!("{} ({} steps)", r.name, r.trace.len());
        print_metrics(r);
    }
    println!("{:<8} {:>14} {:>14}", "signal", "mean|e| delta", "std(e) delta");
    for (name, p) in &report.pairs {
        match p {
            Some(p) => println!("{name:<8} {:>13.1}% {:>13.1}%", p.mean_abs_error_delta_percent, p.std_error_delta_percent),
            None => println!("{name:<8} {:>14} {:>14}", "-", "-"),
        }
    }
    println!("  wrote {}", files.summary.display());
    Ok(())
}

fn sweep(dir: &Path, common: &Common) -> Result<(), HarnessError> {
    let out = common.out_dir(None);
    let results = run_sweep(dir, &common.options())?;
    let mut worst: Option<HarnessError> = None;
    let mut done = Vec::new();
    for (file, r) in results {
        match r {
            Ok(r) => {
                export_result(&r, &out, common.format())?;
                println!("{} ({} steps)", r.name, r.trace.len());
                print_metrics(&r);
                done.push(r);
            }
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                if worst.as_ref().is_none_or(|w| e.exit_code() > w.exit_code()) {
                    worst = Some(e);
                }
            }
        }
    }
    let refs: Vec<&ScenarioResult> = done.iter().collect();
    std::fs::create_dir_all(&out).map_err(|source| HarnessError::Io { path: out.clone(), source })?;
    write_sweep_summary(&refs, &out.join("sweep.summary.csv"))?;
    worst.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, common } => run(scenario, common),
        Command::Ab { scenario, common } => ab(scenario, common),
        Command::Sweep { dir, common } => sweep(dir, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
