fn main() {
    std::process::exit(adlearn::cli::main_with_args(std::env::args_os()));
}
