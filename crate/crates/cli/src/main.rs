use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sbft_core::harness::{
    parse_values, run_scenario, serializability_oracle, sweep, to_csv, MetricsReport, Scenario,
};

#[derive(Parser)]
#[command(name = "sbft", version, about = "Run and check serverless BFT simulations")]
struct Cli {
    /// Overrides the scenario seed.
    #[arg(long, global = true, env = "SBFT_SEED")]
    seed: Option<u64>,
    /// Directory for metrics, verdicts, traces and snapshots.
    #[arg(long, global = true, env = "SBFT_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and report metrics and invariant verdicts.
    Run {
        scenario: PathBuf,
        /// Keep and write the full event trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run a scenario once per value of one field and print CSV.
    Sweep {
        scenario: PathBuf,
        /// Dotted field path, e.g. `config.batch_size`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        /// Also write a gnuplot script for throughput and p50 latency.
        #[arg(long)]
        plot: bool,
    },
    /// Validate a scenario without running it.
    Check { scenario: PathBuf },
    /// Run a scenario and replay its validated transactions serially.
    Oracle {
        scenario: PathBuf,
        /// Flip one applied write before checking, to show the oracle notices.
        #[arg(long)]
        corrupt: bool,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if s.name.is_empty() {
        s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(s)
}

fn write_out(dir: &Option<PathBuf>, name: &str, contents: &[u8]) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Throughput on the left axis and p50 latency on the right, one tick per
/// swept value. Run with `gnuplot sweep.gp` inside the output directory.
fn gnuplot_script(axis: &str, values: &[toml::Value]) -> String {
    let ticks: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| format!("\"{}\" {i}", v.to_string().replace('"', "")))
        .collect();
    format!(
        "set terminal pngcairo size 900,500\n\
         set output 'sweep.png'\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel '{axis}'\n\
         set ylabel 'throughput (txn/s)'\n\
         set y2label 'p50 latency (ms)'\n\
         set ytics nomirror\n\
         set y2tics\n\
         set xtics ({})\n\
         plot 'sweep.csv' using 0:4 with linespoints title 'throughput' axes x1y1, \\\n\
         \x20    '' using 0:5 with linespoints title 'p50 latency' axes x1y2\n",
        ticks.join(", ")
    )
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Check { scenario } => {
            let s = load(&scenario, cli.seed)?;
            match s.validate() {
                Ok(()) => {
                    println!("ok: {}", s.name);
                    Ok(true)
                }
                Err(e) => {
                    println!("invalid: {e}");
                    Ok(false)
                }
            }
        }
        Cmd::Run { scenario, trace } => {
            let mut s = load(&scenario, cli.seed)?;
            s.retain_trace |= trace;
            let out = run_scenario(&s)?;
            println!("{}", MetricsReport::csv_header());
            println!("{}", out.metrics.csv_row());
            print!("{}", out.verdict_summary());
            println!("trace {} ({} events)", out.trace.digest(), out.trace.len());
            write_out(&cli.out, "metrics.json", out.metrics.to_json().as_bytes())?;
            write_out(&cli.out, "metrics.csv", to_csv(std::slice::from_ref(&out.metrics)).as_bytes())?;
            write_out(&cli.out, "verdicts.txt", out.verdict_summary().as_bytes())?;
            write_out(&cli.out, "snapshot.bin", &out.storage.snapshot_bytes())?;
            if s.retain_trace {
                write_out(&cli.out, "trace.txt", out.trace.to_text().as_bytes())?;
            }
            Ok(out.passed())
        }
        Cmd::Sweep { scenario, axis, values, plot } => {
            if plot && cli.out.is_none() {
                anyhow::bail!("--plot needs --out");
            }
            let s = load(&scenario, cli.seed)?;
            let values = parse_values(&values);
            let reports = sweep(&s, &axis, &values)?;
            let csv = to_csv(&reports);
            print!("{csv}");
            write_out(&cli.out, "sweep.csv", csv.as_bytes())?;
            if plot {
                write_out(&cli.out, "sweep.gp", gnuplot_script(&axis, &values).as_bytes())?;
            }
            Ok(true)
        }
        Cmd::Oracle { scenario, corrupt } => {
            let s = load(&scenario, cli.seed)?;
            let out = run_scenario(&s)?;
            let mut decided = out.decided.clone();
            if corrupt && !sbft_core::harness::oracle::corrupt_one_write(&mut decided) {
                println!("nothing to corrupt: no validated writes");
                return Ok(false);
            }
            match serializability_oracle(s.workload.keyspace, s.seed, &decided, &out.storage) {
                Ok(()) => {
                    println!("pass: {} decided sequence numbers replay to the final storage", decided.len());
                    Ok(true)
                }
                Err(c) => {
                    println!("counterexample: {c}");
                    Ok(false)
                }
            }
        }
    }
}
