fn main() {
    std::process::exit(psv::cli::run());
}
