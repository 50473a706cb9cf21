use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use rcse_bench::{load_spec, run_experiment, run_instance, verify};
use rcse_core::estimators::Method;
use rcse_core::scenario::{generate_dataset, read_dataset, write_dataset, ScenarioConfig};

#[derive(Parser)]
#[command(name = "rcse", version, about = "Robust contextual state estimation benchmarks")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it as JSON lines.
    Gen {
        /// Scenario configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also compute and store every retrospective estimate.
        #[arg(long)]
        with_retro: bool,
    },
    /// Estimate one test instance and print the record as JSON.
    Estimate {
        /// Scenario configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Read the dataset from this file instead of generating it.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Position in the test set.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long, default_value = "rcse")]
        method: Method,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment spec (or rerun a manifest) and write the CSV tables.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides every cell's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run quick numerical self-checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn read_scenario(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&text).map_err(config_err)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(config_err(anyhow!("--jobs must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(config_err)?;
    }
    match cli.command {
        Command::Gen {
            config,
            seed,
            out,
            with_retro,
        } => {
            let cfg = read_scenario(&config, seed)?;
            let ds = generate_dataset(&cfg).map_err(|e| Failure::Run(e.into()))?;
            let mut w = BufWriter::new(File::create(&out).map_err(|e| Failure::Run(e.into()))?);
            write_dataset(&ds, &mut w, with_retro).map_err(|e| Failure::Run(e.into()))?;
            w.flush().map_err(|e| Failure::Run(e.into()))?;
            eprintln!(
                "wrote {} instances ({} test, {} resamples) to {}",
                ds.instances.len(),
                ds.test_ids.len(),
                ds.divergences,
                out.display()
            );
        }
        Command::Estimate {
            config,
            dataset,
            seed,
            instance,
            method,
            out,
        } => {
            let ds = match dataset {
                Some(p) => {
                    let f = File::open(&p)
                        .with_context(|| format!("opening {}", p.display()))
                        .map_err(config_err)?;
                    read_dataset(BufReader::new(f)).map_err(config_err)?
                }
                None => {
                    let cfg = read_scenario(&config, seed)?;
                    generate_dataset(&cfg).map_err(|e| Failure::Run(e.into()))?
                }
            };
            let &test_id = ds
                .test_ids
                .get(instance)
                .ok_or_else(|| config_err(anyhow!("test set has {} instances", ds.test_ids.len())))?;
            let result = run_instance(&ds, test_id, &[method]);
            let rec = result.outcomes[0]
                .record
                .as_ref()
                .map_err(|e| Failure::Run(anyhow!("{method} failed on instance {test_id}: {e}")))?;
            let text = serde_json::to_string_pretty(rec).map_err(|e| Failure::Run(e.into()))?;
            match out {
                Some(p) => fs::write(p, text + "\n").map_err(|e| Failure::Run(e.into()))?,
                None => println!("{text}"),
            }
        }
        Command::Bench { config, seed, out } => {
            let mut spec = load_spec(&config).map_err(config_err)?;
            if let Some(s) = seed {
                for c in &mut spec.cells {
                    c.master_seed = s;
                }
            }
            if out.is_some() {
                spec.out_dir = out;
            }
            if cli.jobs.is_some() {
                spec.jobs = None;
            }
            let report = run_experiment(&spec).map_err(|e| {
                if e.is_config() {
                    Failure::Config(e.into())
                } else {
                    Failure::Run(e.into())
                }
            })?;
            for r in report.rows() {
                eprintln!(
                    "{} {} delta={} window={} k={} {:<13} rmse_x={:.4e} rmse_s={:.4e} non_converged={}",
                    r.network, r.redundancy, r.delta, r.window_size, r.k, r.method, r.rmse_x, r.rmse_s, r.non_converged
                );
            }
            if !report.failures.is_empty() {
                for f in &report.failures {
                    eprintln!("cell {} failed: {}", f.index, f.message);
                }
                return Err(Failure::Run(anyhow!("{} cell(s) failed", report.failures.len())));
            }
        }
        Command::Verify { seed } => {
            let checks = verify::run_checks(seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Run(anyhow!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
