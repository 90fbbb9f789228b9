fn main() {
    std::process::exit(capservo::cli::run(std::env::args_os()));
}
