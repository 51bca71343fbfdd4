fn main() {
    std::process::exit(teamci::cli::run(std::env::args_os()));
}
