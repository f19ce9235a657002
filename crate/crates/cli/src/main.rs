use std::process::ExitCode;

use clap::Parser;

use cyclesum_cli::args::{Cli, Command};
use cyclesum_cli::commands;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train_cmd(a).map(drop),
        Command::Eval(a) => commands::eval(a).map(drop),
        Command::VerifyMath(a) => commands::verify_math(a).map(drop),
        Command::Gradcheck(a) => commands::gradcheck(a).map(drop),
        Command::Splits(a) => commands::splits(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
