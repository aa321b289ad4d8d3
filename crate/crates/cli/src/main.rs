fn main() {
    std::process::exit(mtrack_cli::main_with_args(std::env::args_os()));
}
