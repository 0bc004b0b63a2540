fn main() {
    std::process::exit(marg::cli::main_with_args(std::env::args_os()));
}
