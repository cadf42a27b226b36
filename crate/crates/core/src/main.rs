fn main() {
    std::process::exit(mvfuse_core::cli::main());
}
