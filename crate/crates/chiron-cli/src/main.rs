use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::ExitStatus;

#[derive(Parser)]
#[command(
    name = "chiron",
    version,
    about = "Character sheets from long-form stories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a story corpus and split entries into snippets.
    Ingest(commands::ingest::IngestArgs),
    /// Build character sheets end to end: generate, validate, assemble.
    Sheet(commands::sheet::SheetArgs),
    /// Summarize one character from the story so far.
    Summarize(commands::summarize::SummarizeArgs),
    /// Masked-character prediction over a corpus.
    Predict(commands::predict::PredictArgs),
    /// Density analysis of sheets against their stories.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Label distributions, agreement, and classifier metrics.
    Eval(commands::eval::EvalArgs),
}

/// 0 success, 1 partial (warnings), 2 input error, 3 backend error.
fn error_exit_code(err: &anyhow::Error) -> i32 {
    use chiron_core::Error;
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Backend(_) | Error::Generation { .. } | Error::CotComparison { .. } => 3,
                _ => 2,
            };
        }
        if cause
            .downcast_ref::<chiron_core::backend::BackendError>()
            .is_some()
        {
            return 3;
        }
    }
    2
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => commands::ingest::run(args),
        Command::Sheet(args) => commands::sheet::run(args),
        Command::Summarize(args) => commands::summarize::run(args),
        Command::Predict(args) => commands::predict::run(args),
        Command::Analyze(args) => commands::analyze::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    let code = match result {
        Ok(ExitStatus::Clean) => 0,
        Ok(ExitStatus::Partial) => 1,
        Err(err) => {
            eprintln!("error: {err:#}");
            error_exit_code(&err)
        }
    };
    std::process::exit(code);
}
