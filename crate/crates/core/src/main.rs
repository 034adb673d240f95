fn main() {
    std::process::exit(geocond::cli::run(std::env::args_os()));
}
