fn main() {
    std::process::exit(dispersion_unmix::cli::run(std::env::args()));
}
