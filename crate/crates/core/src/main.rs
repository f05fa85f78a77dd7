fn main() {
    std::process::exit(missbgm::cli::run(std::env::args_os()));
}
