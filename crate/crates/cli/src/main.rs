use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use milbeat_cli::commands;
use milbeat_cli::config::RunConfig;

/// Risk scoring for long quasi-periodic signals: instance extraction,
/// instance classification, and aggregation into patient-level scores.
#[derive(Parser)]
#[command(name = "milbeat", version, max_term_width = 100)]
struct Cli {
    /// Configuration file of `key = value` lines; `#` starts a comment.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set k=3`. Repeatable;
    /// applied after the config file, in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: signals, manifest, ground-truth beats.
    Synth,
    /// Clean every manifest signal and cache signals plus beat annotations.
    Preprocess,
    /// Train a classifier on the manifest cohort and save the model file.
    Train,
    /// Score the manifest cohort with a saved model and flag the top quartile.
    Score,
    /// Train and evaluate over stratified splits at every horizon.
    Eval,
    /// Run a robustness sweep (instance-length, aggregator, or positive-fraction).
    Sweep,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; real usage errors
            // report on standard error with the usage/config exit code.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let run = RunConfig::load(cli.config.as_deref(), &cli.set).and_then(|cfg| {
        match cli.command {
            Command::Synth => commands::cmd_synth(&cfg),
            Command::Preprocess => commands::cmd_preprocess(&cfg),
            Command::Train => commands::cmd_train(&cfg),
            Command::Score => commands::cmd_score(&cfg),
            Command::Eval => commands::cmd_eval(&cfg),
            Command::Sweep => commands::cmd_sweep(&cfg),
        }
    });

    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
