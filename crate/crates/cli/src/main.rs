use clap::Parser;

fn main() {
    let cli = mugrid_cli::Cli::parse();
    match mugrid_cli::dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(mugrid_cli::EXIT_ERROR);
        }
    }
}
