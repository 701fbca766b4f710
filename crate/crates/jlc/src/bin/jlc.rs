fn main() {
    std::process::exit(jlc::cli::run());
}
