fn main() {
    pem_cli::init_logging();
    std::process::exit(pem_cli::run(std::env::args_os()));
}
