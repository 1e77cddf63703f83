use std::path::PathBuf;
use std::process::ExitCode;

use adpomdp_harness::{datagen, evaluate, fit, interpret, sweep, train, ExperimentConfig, HarnessError, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adpomdp", version, about = "Belief-based ad bidding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (flat TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated agent list (manual, bandit, tabular_q, em_q, disa).
    #[arg(long, global = true, value_delimiter = ',')]
    agents: Option<Vec<String>>,
    /// Overrides the number of EM restarts.
    #[arg(long = "em-restarts", global = true)]
    em_restarts: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate logged trajectories with the behavior-policy mix.
    GenData,
    /// Fit the action-conditioned HMM (best of restarts).
    FitHmm,
    /// Train the configured agents.
    Train,
    /// Paired evaluation against the manual agent.
    Evaluate,
    /// Expectation table, marginal transitions, belief projection and clusters.
    Interpret,
    /// DISA sweep over gamma and the number of vectors.
    Sweep,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.display().to_string();
    }
    if let Some(a) = &cli.agents {
        cfg.agents = a.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(n) = cli.em_restarts {
        cfg.em_restarts = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let out = cfg.out_path();
    match cli.command {
        Command::GenData => {
            let m = datagen::cmd_gen_data(&cfg)?;
            println!("wrote {} train / {} test trajectories to {}", m.n_train, m.n_test, datagen::data_dir(&out).display());
        }
        Command::FitHmm => {
            let r = fit::cmd_fit_hmm(&cfg)?;
            let best = &r.restarts[r.best_restart];
            println!(
                "best restart {}: train {:.5} / test {:.5} log-likelihood per step ({} iterations)",
                best.restart, best.train_ll_per_step, best.test_ll_per_step, best.iterations
            );
            if !r.unvisited_rows.is_empty() {
                eprintln!("warning: {} parameter rows had no expected visits", r.unvisited_rows.len());
            }
            println!("{}", r.state_note);
        }
        Command::Train => {
            for (kind, t) in train::cmd_train(&cfg)? {
                let last = t.curve.last().map_or(f64::NAN, |r| r.mean_reward);
                println!("{kind}: final epoch mean reward {last:.4}");
            }
        }
        Command::Evaluate => {
            let r = evaluate::cmd_evaluate(&cfg)?;
            println!("{:<10} {:>12} {:>10} {:>10} {:>10}", "agent", "reward/ep", "rel_reward", "rel_roi", "roi");
            for row in &r.rows {
                println!(
                    "{:<10} {:>12.4} {:>10.2} {:>10.2} {:>10.4}",
                    row.agent.to_string(),
                    row.totals.mean_reward(),
                    row.rel_reward,
                    row.rel_roi,
                    row.roi
                );
            }
        }
        Command::Interpret => {
            let r = interpret::cmd_interpret(&cfg)?;
            println!("{} belief points from {}; cluster purity {:.4}", r.n_points, r.source_agent, r.purity);
        }
        Command::Sweep => {
            for r in sweep::cmd_sweep(&cfg)? {
                println!("{}={}: rel_reward {:.2}", r.axis, r.value, r.rel_reward);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if matches!(e, HarnessError::Core(_)) && code == 3 {
                eprintln!("numeric fault; agent state dumped under the agents directory when training");
            }
            ExitCode::from(code as u8)
        }
    }
}
