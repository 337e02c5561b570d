fn main() {
    std::process::exit(deeptcn::cli::run(std::env::args()));
}
