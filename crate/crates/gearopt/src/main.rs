use std::process::ExitCode;

fn main() -> ExitCode {
    let cfg = match gearopt::cli::parse_args(std::env::args_os()) {
        Ok(cfg) => cfg,
        // exits 0 for --help/--version, nonzero for usage errors
        Err(e) => e.exit(),
    };
    match gearopt::cli::execute(&cfg) {
        Ok(artifacts) => {
            for f in &artifacts.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
