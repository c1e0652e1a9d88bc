use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use bsvrb_harness::checks::{gradcheck, verify};
use bsvrb_harness::config::{load_config, RunConfig};
use bsvrb_harness::experiment::{build_problem, run_experiment};
use bsvrb_harness::sweep::{sweep, write_sweep, Axis};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bsvrb", version, about = "Blockwise variance-reduced bilevel solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set params.eta=0.05`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (same as `--set out_dir=...`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (same as `--set seeds=[...]`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("out_dir={}", toml::Value::String(out.display().to_string())));
        }
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        load_config(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm for every seed and write traces and summaries.
    Run(ConfigArgs),
    /// Iterations to reach an exact gradient-norm threshold while sweeping I or B.
    SweepSpeedup {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "blocks")]
        over: Axis,
        /// Values to sweep; default 1,2,5,10,20 for I and 1,4,16,64 for B.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
    /// Finite-difference and unbiasedness checks of the problem's oracles.
    Verify {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 3)]
        points: usize,
    },
    /// Exact hypergradient against central differences of the exact objective.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.seeds[0]
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let agg = run_experiment(&cfg)?;
            println!(
                "{}: {} seeds, median |grad F| = {:.4e}, median samples = {}",
                agg.algorithm,
                agg.seeds.len(),
                agg.median_final_exact_grad_norm,
                agg.median_samples
            );
            if let Some(acc) = agg.median_test_accuracy {
                println!("median best-on-validation test accuracy = {acc:.4}");
            }
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::SweepSpeedup {
            cfg,
            over,
            values,
            threshold,
        } => {
            let cfg = cfg.load()?;
            let values = values.unwrap_or_else(|| match over {
                Axis::Blocks => vec![1, 2, 5, 10, 20],
                Axis::Batch => vec![1, 4, 16, 64],
            });
            let table = sweep(&cfg, over, &values, threshold)?;
            println!("{:>6} {:>10} {:>10} {:>8}", "value", "median", "mad", "reached");
            for r in &table.rows {
                println!("{:>6} {:>10.1} {:>10.1} {:>5}/{}", r.value, r.median, r.mad, r.reached, r.iterations.len());
            }
            println!("nonincreasing within MAD: {}", table.nonincreasing);
            write_sweep(&cfg.out_dir, &cfg.seeds, &table)?;
        }
        Command::Verify { cfg, points } => {
            let cfg = cfg.load()?;
            let seed = first_seed(&cfg);
            let built = build_problem(&cfg.problem, seed, cfg.vary_problem)?;
            let report = verify(built.oracle(), points, seed)?;
            for c in &report.checks {
                let tag = if c.passed() { "ok  " } else { "FAIL" };
                println!("{tag} {:<40} {:.3e} (tol {:.0e})", c.name, c.error, c.tolerance);
            }
            if !report.passed() {
                bail!("{} oracle checks failed", report.failures().count());
            }
        }
        Command::Gradcheck { cfg, points, h, tol } => {
            let cfg = cfg.load()?;
            let seed = first_seed(&cfg);
            let built = build_problem(&cfg.problem, seed, cfg.vary_problem)?;
            let g = gradcheck(built.oracle(), points, h, seed)?;
            println!("{} points, worst relative error {:.3e} (tol {tol:.0e})", g.points, g.worst);
            if !(g.worst <= tol) {
                bail!("hypergradient check failed");
            }
        }
    }
    Ok(())
}
