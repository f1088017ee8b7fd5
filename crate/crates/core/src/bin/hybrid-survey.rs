fn main() {
    std::process::exit(hybrid_survey::cli::run(std::env::args_os()));
}
