use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use tmlab::config::ExperimentConfig;
use tmlab::record::summary_csv;
use tmlab::run::{self, alpha_stage, graded_forms, load_records, point_stage, prepare, write_outputs};

#[derive(Parser)]
#[command(name = "tmlab", version, about = "Subcritical and critical Trudinger-Moser experiments")]
struct Cli {
    /// TOML experiment config; `TMLAB_`-prefixed environment variables
    /// override its keys (`TMLAB_SOLVER__SEED=3`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximizer multistart seed (overrides `solver.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenpairs of the configured geometry.
    Eigen,
    /// Green function and regular part for every alpha.
    Green,
    /// Subcritical maximizers over the (alpha, epsilon) grid.
    Maximize,
    /// Test-function lower bound for every alpha.
    Testfn,
    /// Maximizers plus blow-up diagnostics.
    Blowup,
    /// Full sweep: records, summary table and plots.
    Sweep,
    /// Rebuilds the summary table and plots from saved records.
    Report,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(p)
}

#[derive(Serialize)]
struct Entry<T> {
    alpha: f64,
    epsilon: Option<f64>,
    result: Option<T>,
    error: Option<String>,
}

fn entry<T>(alpha: f64, epsilon: Option<f64>, r: Result<T>) -> Entry<T> {
    match r {
        Ok(v) => Entry {
            alpha,
            epsilon,
            result: Some(v),
            error: None,
        },
        Err(e) => Entry {
            alpha,
            epsilon,
            result: None,
            error: Some(format!("{e:#}")),
        },
    }
}

fn report_entries<T>(entries: &[Entry<T>], path: &Path) -> usize {
    let failed = entries.iter().filter(|e| e.error.is_some()).count();
    for e in entries.iter().filter(|e| e.error.is_some()) {
        eprintln!("alpha {} eps {:?}: {}", e.alpha, e.epsilon, e.error.as_deref().unwrap_or(""));
    }
    println!("{} entries, {} failed -> {}", entries.len(), failed, path.display());
    failed
}

fn grid(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    cfg.alphas.iter().flat_map(|&a| cfg.epsilons.iter().map(move |&e| (a, e))).collect()
}

fn execute(cli: &Cli) -> Result<usize> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.solver.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    let out = cfg.output.clone();
    match cli.command {
        Command::Eigen => {
            let prep = prepare(&cfg)?;
            let p = write_json(&out, "eigen.json", &prep.basis.summary())?;
            let csv = out.join("eigen.csv");
            prep.basis.write_csv(std::fs::File::create(&csv)?)?;
            for (l, m) in prep.basis.eigenvalues().iter().zip(prep.basis.multiplicities()) {
                println!("{l:.10} x{m}");
            }
            println!("-> {}", p.display());
            Ok(0)
        }
        Command::Green | Command::Testfn => {
            let prep = prepare(&cfg)?;
            let (forms, basis) = graded_forms(&prep, &cfg)?;
            let stages: Vec<_> = cfg.alphas.par_iter().map(|&a| (a, alpha_stage(&forms, basis.as_ref(), &cfg, a))).collect();
            if matches!(cli.command, Command::Green) {
                let entries: Vec<_> = stages
                    .into_iter()
                    .map(|(a, s)| entry(a, None, s.map(|s| (s.green_summary(), s.certificate))))
                    .collect();
                let p = write_json(&out, "green.json", &entries)?;
                Ok(report_entries(&entries, &p))
            } else {
                let entries: Vec<_> = stages
                    .into_iter()
                    .map(|(a, s)| entry(a, Some(cfg.testfn.epsilon), s.and_then(|s| s.testfn.map_err(anyhow::Error::msg))))
                    .collect();
                let p = write_json(&out, "testfn.json", &entries)?;
                Ok(report_entries(&entries, &p))
            }
        }
        Command::Maximize | Command::Blowup => {
            let prep = prepare(&cfg)?;
            let blowup = matches!(cli.command, Command::Blowup);
            let green: Vec<_> = if blowup {
                let (forms, basis) = graded_forms(&prep, &cfg)?;
                cfg.alphas.par_iter().map(|&a| alpha_stage(&forms, basis.as_ref(), &cfg, a).ok()).collect()
            } else {
                cfg.alphas.iter().map(|_| None).collect()
            };
            let points = grid(&cfg);
            let stages: Vec<_> = points
                .par_iter()
                .map(|&(a, e)| {
                    let ai = cfg.alphas.iter().position(|x| x.to_bits() == a.to_bits()).expect("alpha in grid");
                    point_stage(&prep, green[ai].as_ref().map(|s| &s.green), &cfg, a, e)
                })
                .collect();
            if blowup {
                let entries: Vec<_> = points
                    .iter()
                    .zip(stages)
                    .map(|(&(a, e), s)| entry(a, Some(e), s.map(|s| (s.blowup, s.energy_split))))
                    .collect();
                let p = write_json(&out, "blowup.json", &entries)?;
                Ok(report_entries(&entries, &p))
            } else {
                let entries: Vec<_> = points
                    .iter()
                    .zip(stages)
                    .map(|(&(a, e), s)| entry(a, Some(e), s.map(|s| (s.summary, s.constraints))))
                    .collect();
                let p = write_json(&out, "maximizer.json", &entries)?;
                Ok(report_entries(&entries, &p))
            }
        }
        Command::Sweep => {
            let outcome = run::run_experiment(&cfg);
            write_outputs(&out, &cfg, &outcome)?;
            for r in outcome.records.iter().filter(|r| !r.is_ok()) {
                eprintln!("point {} (alpha {}, eps {}): {}", r.index, r.alpha, r.epsilon, r.error.as_deref().unwrap_or(""));
            }
            print!("{}", outcome.summary_csv());
            Ok(outcome.failures())
        }
        Command::Report => {
            let records = load_records(&out)?;
            if records.is_empty() {
                bail!("no records under {}", out.display());
            }
            std::fs::write(out.join("summary.csv"), summary_csv(&records))?;
            tmlab::plots::emit_plots(&records, &out.join("plots"))?;
            print!("{}", summary_csv(&records));
            Ok(records.iter().filter(|r| !r.is_ok()).count())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
