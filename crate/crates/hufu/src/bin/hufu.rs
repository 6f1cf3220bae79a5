fn main() {
    std::process::exit(hufu::cli::run());
}
