fn main() {
    std::process::exit(matchweight::cli::run(std::env::args_os()));
}
