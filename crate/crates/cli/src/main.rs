use std::process::ExitCode;

use ced::{execute, parse_config, ErrorReport, ParseOutcome};

const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 1;

fn fail(report: ErrorReport, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let job = match parse_config(std::env::args_os()) {
        Ok(job) => job,
        Err(ParseOutcome::Info(text)) => {
            print!("{text}");
            return ExitCode::SUCCESS;
        }
        Err(ParseOutcome::Error(e)) => return fail(ErrorReport::from_config(&e), EXIT_USAGE),
    };
    match execute(&job) {
        Ok(out) if out.files.is_empty() => {
            print!("{}", out.json);
            ExitCode::SUCCESS
        }
        Ok(out) => {
            let files: Vec<_> = out.files.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "written": files }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(ErrorReport::from_command(&e), EXIT_FAILURE),
    }
}
