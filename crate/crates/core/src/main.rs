fn main() {
    std::process::exit(maxent_reversal::cli::run_from(std::env::args_os()));
}
