fn main() {
    std::process::exit(tsadbench::cli::main_with_args(std::env::args_os()));
}
