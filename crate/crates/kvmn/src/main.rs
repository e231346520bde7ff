use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kvmn::commands::{gradcheck_failures, run_decode, run_eval, run_gen_data, run_gradcheck, run_train};
use kvmn::config::Config;
use kvmn::{CliError, CliResult};

/// Key-value memory network captioner.
///
/// Every config key can be set with `--key=value` after the subcommand;
/// flags override the config file.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file with flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key=value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoints plus a per-step loss log.
    Train(Common),
    /// Beam-decode and report BLEU-4 and teacher-forced token accuracy.
    Eval(Common),
    /// Beam-decode and print one caption per episode.
    Decode(Common),
    /// Compare analytic and numeric gradients in every mode.
    Gradcheck(Common),
    /// Write synthetic episodes as JSON Lines.
    GenData {
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let resolve = |c: &Common| Config::resolve(c.config.as_deref(), &c.overrides);
    match cli.command {
        Command::Train(c) => print_json(&run_train(&resolve(&c)?)?),
        Command::Eval(c) => print_json(&run_eval(&resolve(&c)?)?),
        Command::Decode(c) => run_decode(&resolve(&c)?)?.iter().try_for_each(print_json),
        Command::Gradcheck(c) => {
            let lines = run_gradcheck(&resolve(&c)?)?;
            lines.iter().try_for_each(print_json)?;
            match gradcheck_failures(&lines).len() {
                0 => Ok(()),
                n => Err(CliError::Numeric(format!("{n} gradient checks exceeded the tolerance"))),
            }
        }
        Command::GenData { output, common } => {
            let n = run_gen_data(&resolve(&common)?, &output)?;
            eprintln!("wrote {n} episodes to {}", output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kvmn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
