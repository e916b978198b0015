fn main() {
    std::process::exit(sawe::cli::main_with_args(std::env::args_os().collect()));
}
