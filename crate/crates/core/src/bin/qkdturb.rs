fn main() {
    std::process::exit(turbqkd::cli::main_with_args(std::env::args_os()));
}
