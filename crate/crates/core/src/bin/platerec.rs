use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platerec::error::{Error, ErrorCategory, Result};
use platerec::pipeline::{run, Command, RunConfig, Scale};

#[derive(Parser)]
#[command(name = "platerec", version, about = "License-plate synthesis, GAN translation and CRNN recognition")]
struct Cli {
    /// Run configuration (`key = value` lines, `[section]` prefixes).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Render a synthetic plate dataset.
    Synth,
    /// Train a CycleGAN between two image sets.
    GanTrain,
    /// Translate a dataset with saved generators.
    GanGenerate,
    /// Train a recognizer through the configured stages.
    Train,
    /// Report RA, CRA and top-N accuracy.
    Eval,
    /// Decode a dataset with best-path and beam search.
    Decode,
    /// Write a character confidence map.
    Confmap,
    /// Print the separable-convolution cost tables.
    Cost,
    /// Mix labelled real plates with unlabelled generated ones.
    MixAllInOne,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::GanTrain => Command::GanTrain,
            Cmd::GanGenerate => Command::GanGenerate,
            Cmd::Train => Command::Train,
            Cmd::Eval => Command::Eval,
            Cmd::Decode => Command::Decode,
            Cmd::Confmap => Command::Confmap,
            Cmd::Cost => Command::Cost,
            Cmd::MixAllInOne => Command::MixAllInOne,
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::defaults(Scale::Toy),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::config("--set", format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.apply(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config(&cli).and_then(|cfg| run(cli.cmd.into(), &cfg, &mut |m| eprintln!("{m}")));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Divergence => 4,
                ErrorCategory::Other => 1,
            })
        }
    }
}
