use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modelfree::bench::catalog::{load, RunOptions};
use modelfree::bench::config::parse_override;
use modelfree::bench::{catalog, compare, resolve, run_scenario, RunArtifact};

/// Closed-loop scenario runner for model-free control.
#[derive(Parser)]
#[command(name = "modelfree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Override a scenario key, e.g. `controller.gains.0.kp=4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory receiving traces, metrics and metadata.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable measurement noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario given by catalog label (`label` or `label:baseline`) or file path.
    Run {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run several scenarios on the same plant and reference and print rms ratios.
    Compare {
        #[arg(num_args = 2.., required = true)]
        scenarios: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// List the built-in scenarios.
    Catalog {
        /// Print the scenario file of this label instead.
        #[arg(long)]
        show: Option<String>,
    },
}

fn options(c: &Common) -> modelfree::Result<RunOptions> {
    let overrides = c.set.iter().map(|s| parse_override(s)).collect::<modelfree::Result<Vec<_>>>()?;
    Ok(RunOptions { overrides, seed: c.seed, noiseless: c.noiseless })
}

fn print_metrics(run: &RunArtifact) {
    for (j, m) in run.metrics.iter().enumerate() {
        println!(
            "{}  y_{}  rms {:.6}  max {:.6}  window [{:.2}, {:.2}] s",
            run.label,
            j + 1,
            m.rms_error,
            m.max_abs_error,
            m.eval_window.0,
            m.eval_window.1
        );
    }
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, common } => {
            let cfg = resolve(&scenario, &options(&common)?)?;
            match run_scenario(&cfg) {
                Ok(run) => {
                    print_metrics(&run);
                    if let Some(dir) = &common.out {
                        run.write_to(dir)?;
                    }
                }
                Err(fail) => {
                    if let (Some(dir), Some(partial)) = (&common.out, &fail.partial) {
                        partial.write_to(dir)?;
                    }
                    return Err(Box::new(fail));
                }
            }
        }
        Command::Compare { scenarios, common } => {
            let opts = options(&common)?;
            let cfgs = scenarios.iter().map(|s| resolve(s, &opts)).collect::<modelfree::Result<Vec<_>>>()?;
            let cmp = compare(&cfgs)?;
            for run in &cmp.runs {
                print_metrics(run);
                if let Some(dir) = &common.out {
                    run.write_to(&dir.join(run.label.replace(':', "_")))?;
                }
            }
            println!("rms ratios (row / column):");
            for (i, row) in cmp.ratios.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|r| format!("{r:.4}")).collect();
                println!("{:<32} {}", cmp.labels[i], cells.join("  "));
            }
        }
        Command::Catalog { show } => match show {
            Some(label) => {
                let (src, _) = load(&label)?;
                let entry = catalog().into_iter().find(|e| e.label == label);
                match entry {
                    Some(e) => print!("{}", e.source),
                    None => print!("{}", toml::to_string(&src.table)?),
                }
            }
            None => {
                for e in catalog() {
                    let tag = if e.has_baseline { " [+baseline]" } else { "" };
                    println!("{:<28} {}{}", e.label, e.description, tag);
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
