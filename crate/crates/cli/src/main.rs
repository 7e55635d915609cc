fn main() {
    std::process::exit(cqr_cli::run_from(std::env::args_os()));
}
