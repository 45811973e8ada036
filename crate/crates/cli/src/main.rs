use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use comodeler_cli::{run, serve, Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve(args) => serve(args, cli.json).map(|()| None),
        _ => run(&cli, &mut |w| eprintln!("warning: {w}")).map(Some),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(out)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = if cli.json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).expect("json output"))
            } else {
                write!(stdout, "{}", out.text)
            };
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                let body = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
                eprintln!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
