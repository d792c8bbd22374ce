fn main() {
    std::process::exit(lrsearch::harness::cli::run_cli(std::env::args_os()));
}
