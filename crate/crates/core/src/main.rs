fn main() {
    std::process::exit(dronesense::harness::cli::cli_main(std::env::args_os()));
}
