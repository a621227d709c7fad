fn main() {
    std::process::exit(alertkit::cli::main_with_args(std::env::args_os()));
}
