fn main() {
    std::process::exit(tls_refocus::cli::main_with_args(std::env::args_os()));
}
