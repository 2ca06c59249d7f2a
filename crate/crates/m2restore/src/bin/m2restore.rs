fn main() {
    std::process::exit(m2restore::cli::main_with_args(std::env::args_os()));
}
