fn main() {
    std::process::exit(drb::cli::main());
}
