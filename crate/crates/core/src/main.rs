fn main() {
    std::process::exit(minctl::cli::run_cli(std::env::args_os()));
}
