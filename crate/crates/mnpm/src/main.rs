fn main() {
    std::process::exit(mnpm::cli::run(std::env::args()));
}
