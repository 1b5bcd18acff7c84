fn main() {
    std::process::exit(gapsolve::cli::run(std::env::args()));
}
