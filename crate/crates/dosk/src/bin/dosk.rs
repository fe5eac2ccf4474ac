fn main() {
    std::process::exit(dosk::cli::run());
}
