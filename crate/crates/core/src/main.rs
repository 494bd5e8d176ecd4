fn main() {
    std::process::exit(q2d_core::cli::main_with_args(std::env::args_os()));
}
