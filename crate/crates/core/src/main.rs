use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use datadep::cli::{run, Cli, Context};
use datadep::StdPromptIo;

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .parse_env("DATADEP_LOG")
        .format(|buf, record| match record.level() {
            log::Level::Info | log::Level::Debug | log::Level::Trace => {
                writeln!(buf, "datadep: {}", record.args())
            }
            level => writeln!(buf, "datadep: {}: {}", level.as_str().to_lowercase(), record.args()),
        })
        .target(env_logger::Target::Stderr)
        .init();

    let cli = Cli::parse();
    let ctx = match Context::from_process() {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("datadep: error: cannot determine working directory: {e}");
            return ExitCode::from(1);
        }
    };
    let status = run(cli, &ctx, &mut io::stdout(), &mut io::stderr(), &mut StdPromptIo);
    ExitCode::from(status.code())
}
