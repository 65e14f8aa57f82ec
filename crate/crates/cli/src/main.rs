//! `bst`: run stochastic conditional gradient experiments and apply the
//! batch-size / stepsize transfer rules from the command line.
//!
//! Exit codes: 0 success, 2 config or input error, 3 invariant violation,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bst_core::estimation::{FitOptions, PowerLawShape};
use bst_core::harness::{self, EstimateKind, EstimateOptions, PlanInputs, PlanRule, EXIT_INVARIANT};
use bst_core::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "bst", version, about = "Batch-size and stepsize transfer for stochastic conditional gradient")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training config; writes runlog.csv, curvature.csv and summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a (B, S) sweep at a fixed token budget; writes sweep.csv and summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Apply a transfer rule to a tuned base configuration.
    Plan {
        #[arg(long, value_enum)]
        rule: RuleArg,
        /// JSON file with the rule inputs.
        #[arg(long)]
        inputs: PathBuf,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate L, mu, rho or the variance law from a CSV.
    Estimate {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = EstimateOptions::default().window)]
        window: usize,
        #[arg(long, default_value_t = EstimateOptions::default().loss_cap)]
        loss_cap: f64,
        #[arg(long, default_value_t = EstimateOptions::default().huber_delta)]
        huber_delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a shifted power law described by a shape JSON to a CSV.
    Fit {
        #[arg(long)]
        shape: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = FitOptions::default().starts)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    ModelSize,
    TokenBudget,
    Stages,
    Sqrt,
    Nonconvex,
}

impl From<RuleArg> for PlanRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::ModelSize => PlanRule::ModelSize,
            RuleArg::TokenBudget => PlanRule::TokenBudget,
            RuleArg::Stages => PlanRule::Stages,
            RuleArg::Sqrt => PlanRule::Sqrt,
            RuleArg::Nonconvex => PlanRule::Nonconvex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "L")]
    L,
    #[value(name = "mu")]
    Mu,
    #[value(name = "rho")]
    Rho,
    #[value(name = "variance")]
    Variance,
}

impl From<KindArg> for EstimateKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::L => EstimateKind::L,
            KindArg::Mu => EstimateKind::Mu,
            KindArg::Rho => EstimateKind::Rho,
            KindArg::Variance => EstimateKind::Variance,
        }
    }
}

fn emit(value: &Value, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Train { config, out } => {
            let summary = harness::cmd_train(&config, &out)?;
            println!("final_loss {:.6e}  invariant_violations {}", summary.final_loss, summary.invariant_violations);
            if summary.invariant_violations > 0 {
                for v in &summary.invariant_examples {
                    eprintln!("invariant violation: {v:?}");
                }
                return Ok(EXIT_INVARIANT);
            }
        }
        Command::Sweep { config, out, jobs } => {
            let res = harness::cmd_sweep(&config, &out, jobs)?;
            let failed = res.rows.iter().filter(|r| !r.error.is_empty()).count();
            println!("{} points, {} failed, critical BS {:.4e}", res.rows.len(), failed, res.critical_bs);
            if res.rows.iter().any(|r| r.invariant_violations > 0) {
                return Ok(EXIT_INVARIANT);
            }
        }
        Command::Plan { rule, inputs, out } => {
            let text = fs::read_to_string(&inputs)?;
            let inputs: PlanInputs =
                serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", inputs.display())))?;
            emit(&harness::plan(rule.into(), &inputs)?, out.as_deref())?;
        }
        Command::Estimate { kind, input, window, loss_cap, huber_delta, out } => {
            let text = fs::read_to_string(&input)?;
            let opts = EstimateOptions { window, loss_cap, huber_delta };
            emit(&harness::estimate_csv(kind.into(), &text, opts)?, out.as_deref())?;
        }
        Command::Fit { shape, input, starts, seed, out } => {
            let shape_text = fs::read_to_string(&shape)?;
            let shape: PowerLawShape = serde_json::from_str(&shape_text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", shape.display())))?;
            let text = fs::read_to_string(&input)?;
            let opts = FitOptions { starts, seed, ..FitOptions::default() };
            emit(&harness::fit_csv(&shape, &text, opts)?, out.as_deref())?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
