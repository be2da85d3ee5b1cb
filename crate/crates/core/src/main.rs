fn main() {
    std::process::exit(texup::cli::main_with_args(std::env::args_os()));
}
