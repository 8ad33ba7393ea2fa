fn main() {
    std::process::exit(mixhmm::cli::run());
}
