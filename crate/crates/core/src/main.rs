use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lungsound::cli::{
    cmd_cv, cmd_featurize, cmd_predict, cmd_report, cmd_summarize, cmd_synth, cmd_train, parse_overrides,
    PipelineConfig, SynthCommand,
};
use lungsound::Error;

/// Lung-sound classification pipeline.
///
/// Every verb takes `--config <file>` and `--key value` overrides; run a
/// verb with `--keys` to list the keys it accepts.
#[derive(Parser)]
#[command(name = "lungsound", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Overrides {
    /// `--config <file>` and `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Count annotated cycles per class in data_dir.
    Summarize(Overrides),
    /// Write the feature-image cache for data_dir into cache_dir.
    Featurize(Overrides),
    /// Train a head on every cycle and save it to model_path.
    Train(Overrides),
    /// Classify `--input <wav or dir>` with a trained head.
    Predict(Overrides),
    /// Patient-wise k-fold cross-validation; writes report.json and report.txt.
    Cv(Overrides),
    /// Generate a synthetic corpus into out_dir.
    Synth(Overrides),
    /// Print the table for `--input <report.json>` (default out_dir/report.json).
    Report(Overrides),
}

fn wants_keys(args: &[String]) -> bool {
    args.iter().any(|a| a == "--keys")
}

fn run(verb: Verb) -> Result<(), Error> {
    match verb {
        Verb::Synth(o) => {
            if wants_keys(&o.args) {
                println!("{}", SynthCommand::KEYS.join("\n"));
                return Ok(());
            }
            let cmd = SynthCommand::resolve(parse_overrides(&o.args)?)?;
            let files = cmd_synth(&cmd)?;
            println!("wrote {} recordings to {}", files.len(), cmd.out_dir.display());
        }
        Verb::Summarize(o) | Verb::Featurize(o) | Verb::Train(o) | Verb::Predict(o) | Verb::Cv(o)
        | Verb::Report(o)
            if wants_keys(&o.args) =>
        {
            println!("{}", PipelineConfig::KEYS.join("\n"));
        }
        Verb::Summarize(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            println!("{}", cmd_summarize(&cfg.data_dir)?);
        }
        Verb::Featurize(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            let s = cmd_featurize(&cfg)?;
            println!("{} entries, {} written", s.entries, s.written);
        }
        Verb::Train(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            for (i, l) in cmd_train(&cfg)?.iter().enumerate() {
                println!("epoch {:>3}  loss {l:.6}", i + 1);
            }
            println!("saved {}", cfg.model_path().display());
        }
        Verb::Predict(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            let input = cfg
                .input
                .clone()
                .ok_or_else(|| Error::Config("predict needs --input <wav or directory>".into()))?;
            println!("identity\tlabel\tp_normal\tp_crackles\tp_wheezes\tp_both");
            for p in cmd_predict(&cfg, &input)? {
                println!("{p}");
            }
        }
        Verb::Cv(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            let report = cmd_cv(&cfg)?;
            print!("{}", report.to_text());
        }
        Verb::Report(o) => {
            let cfg = PipelineConfig::resolve(parse_overrides(&o.args)?)?;
            let path: PathBuf = cfg.input.clone().unwrap_or_else(|| cfg.out_dir.join("report.json"));
            print!("{}", cmd_report(&path)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
