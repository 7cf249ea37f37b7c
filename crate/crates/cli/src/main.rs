//! `fbqs`: analyze knowledge connectivity graphs and federated Byzantine
//! quorum systems, and simulate sink discovery over them.
//!
//! Exit codes: 0 when the checked property holds (or a reproduction matches),
//! 1 when it fails, 2 on usage or input errors.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fbqs_cli::commands::{self, CommandOutput, SliceSource};
use fbqs_core::ProcessId;

#[derive(Parser)]
#[command(name = "fbqs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check k-one-sink-reducibility of a scenario's knowledge graph.
    CheckOsr {
        #[arg(long)]
        scenario: PathBuf,
        /// Required connectivity toward and within the sink.
        #[arg(long)]
        k: usize,
        /// Also check Byzantine-safety for every faulty set of size <= f.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        json: bool,
    },
    /// List the sink components of the knowledge graph's condensation.
    Sink {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Build slices from each process's own knowledge list.
    LocalSlices {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Build slices from graph-derived ground-truth sink views.
    SdSlices {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check consensus clusters under a chosen slice system.
    VerifyCluster {
        #[arg(long)]
        scenario: PathBuf,
        /// Candidate set, e.g. "5,6,7". Without it, enumerate maximal
        /// clusters and test whether the correct set forms one.
        #[arg(long)]
        candidate: Option<String>,
        #[arg(long, value_enum, default_value_t = SliceSourceArg::Auto)]
        slices: SliceSourceArg,
        #[arg(long)]
        json: bool,
    },
    /// Run the sink-detector protocol stack and verify the resulting
    /// cluster structure.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        /// Write the full event trace (one JSON record per line).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Reproduce a built-in worked example.
    Repro {
        #[arg(value_enum)]
        figure: Figure,
        #[arg(long)]
        json: bool,
    },
    /// Generate a k-one-sink-reducible scenario.
    Gen {
        #[arg(long)]
        n_sink: usize,
        #[arg(long, default_value_t = 0)]
        n_nonsink: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fault bound recorded in the scenario; defaults to k - 1.
        #[arg(long)]
        f: Option<usize>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Figure {
    Fig1,
    Fig2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SliceSourceArg {
    Auto,
    Explicit,
    Local,
    Sd,
}

impl From<SliceSourceArg> for SliceSource {
    fn from(v: SliceSourceArg) -> Self {
        match v {
            SliceSourceArg::Auto => SliceSource::Auto,
            SliceSourceArg::Explicit => SliceSource::Explicit,
            SliceSourceArg::Local => SliceSource::Local,
            SliceSourceArg::Sd => SliceSource::Sd,
        }
    }
}

fn parse_id_set(text: &str) -> anyhow::Result<BTreeSet<ProcessId>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<ProcessId>()
                .map_err(|e| anyhow::anyhow!("invalid process id `{p}`: {e}"))
        })
        .collect()
}

fn dispatch(command: Command) -> anyhow::Result<(CommandOutput, bool)> {
    match command {
        Command::CheckOsr {
            scenario,
            k,
            exhaustive,
            json,
        } => {
            let s = commands::load_scenario(&scenario)?;
            Ok((commands::cmd_check_osr(&s, k, exhaustive)?, json))
        }
        Command::Sink { scenario, json } => {
            let s = commands::load_scenario(&scenario)?;
            Ok((commands::cmd_sink(&s)?, json))
        }
        Command::LocalSlices { scenario, json } => {
            let s = commands::load_scenario(&scenario)?;
            Ok((commands::cmd_local_slices(&s)?, json))
        }
        Command::SdSlices { scenario, json } => {
            let s = commands::load_scenario(&scenario)?;
            Ok((commands::cmd_sd_slices(&s)?, json))
        }
        Command::VerifyCluster {
            scenario,
            candidate,
            slices,
            json,
        } => {
            let s = commands::load_scenario(&scenario)?;
            let candidate = candidate.as_deref().map(parse_id_set).transpose()?;
            Ok((
                commands::cmd_verify_cluster(&s, candidate.as_ref(), slices.into())?,
                json,
            ))
        }
        Command::Simulate {
            scenario,
            seed,
            budget,
            trace_out,
            json,
        } => {
            let s = commands::load_scenario(&scenario)?;
            let out = commands::cmd_simulate(&s, seed, budget)?;
            if let (Some(path), Some(trace)) = (&trace_out, &out.trace) {
                std::fs::write(path, trace)?;
            }
            Ok((out, json))
        }
        Command::Repro { figure, json } => {
            let out = match figure {
                Figure::Fig1 => commands::cmd_repro_fig1()?,
                Figure::Fig2 => commands::cmd_repro_fig2()?,
            };
            Ok((out, json))
        }
        Command::Gen {
            n_sink,
            n_nonsink,
            k,
            seed,
            f,
            out,
        } => {
            let text = commands::cmd_gen(n_sink, n_nonsink, k, seed, f)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            std::process::exit(0);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok((output, json)) => {
            if json {
                print!("{}", output.report.to_jsonl());
            } else {
                print!("{}", output.report);
            }
            if output.holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
