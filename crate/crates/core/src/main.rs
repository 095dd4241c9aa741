fn main() {
    std::process::exit(selguide::cli::run(std::env::args_os()));
}
