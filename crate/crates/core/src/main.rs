fn main() {
    std::process::exit(rishm::experiments::cli::run(std::env::args_os()));
}
