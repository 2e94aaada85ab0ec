fn main() {
    std::process::exit(cholup::cli::run());
}
