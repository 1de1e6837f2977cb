fn main() {
    std::process::exit(dmas_forge::cli::main());
}
