fn main() {
    std::process::exit(caufc::cli::main_with_args(std::env::args_os()));
}
