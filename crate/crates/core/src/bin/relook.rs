fn main() {
    std::process::exit(relook_core::cli::main_with_args(std::env::args_os()));
}
