fn main() {
    std::process::exit(critlayer::cli::main_with_args(std::env::args_os()));
}
