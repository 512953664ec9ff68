fn main() {
    std::process::exit(robin_stokes::cli::run());
}
