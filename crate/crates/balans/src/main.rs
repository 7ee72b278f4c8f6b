fn main() {
    std::process::exit(balans::cli::run());
}
