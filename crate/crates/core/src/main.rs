fn main() {
    std::process::exit(diqcd::cli::main_with_args(std::env::args_os()));
}
