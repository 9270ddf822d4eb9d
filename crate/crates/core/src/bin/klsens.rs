fn main() {
    std::process::exit(klsens::cli::run(std::env::args_os()));
}
