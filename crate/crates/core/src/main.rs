fn main() {
    std::process::exit(poselift::cli::main());
}
