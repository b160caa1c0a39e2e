use clap::Parser;

/// Streaming affect predictions over newline-delimited JSON on TCP.
#[derive(Parser)]
#[command(name = "affectd", version)]
struct Opts {
    #[command(flatten)]
    serve: pem_cli::ServeArgs,
}

fn main() {
    pem_cli::init_logging();
    let opts = match Opts::try_parse() {
        Ok(o) => o,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { pem_cli::EXIT_USAGE } else { pem_cli::EXIT_OK });
        }
    };
    if let Err(e) = pem_cli::serve(opts.serve) {
        std::process::exit(pem_cli::report_error(&e));
    }
}
