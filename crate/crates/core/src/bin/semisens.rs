fn main() {
    std::process::exit(semisens::cli::main());
}
