fn main() {
    std::process::exit(sonarprep::cli::run(std::env::args_os()));
}
