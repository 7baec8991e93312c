// Copyright 2026 The tb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tb::commands::{cmd_apc_bench, cmd_collect, cmd_evaluate, cmd_report, cmd_serve, cmd_train};
use tb::config::ExperimentConfig;

/// Collect experience, train sequence policies, evaluate them and benchmark
/// the request scheduler.
#[derive(Parser)]
#[command(name = "tb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run a baseline over environments and write an experience file.
    Collect,
    /// Train a sequence policy on an experience file.
    Train,
    /// Evaluate baselines and an optional checkpoint; writes CSV reports.
    Evaluate,
    /// Sweep the scheduler load experiment.
    ApcBench,
    /// Render figures from CSV reports.
    Report,
    /// Serve a CC checkpoint over TCP.
    Serve,
}

fn run(cli: &Cli) -> tb::Result<()> {
    let path = cli.config.as_ref().ok_or_else(|| tb::Error::Config("--config <path> is required".into()))?;
    let cfg = ExperimentConfig::load(path, &cli.overrides)?;
    match cli.command {
        Command::Collect => cmd_collect(&cfg).map(drop),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Evaluate => cmd_evaluate(&cfg).map(drop),
        Command::ApcBench => cmd_apc_bench(&cfg).map(drop),
        Command::Report => {
            for p in cmd_report(&cfg)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Serve => cmd_serve(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
