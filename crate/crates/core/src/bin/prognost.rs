fn main() {
    std::process::exit(prognost::cli::run(std::env::args_os()));
}
