fn main() {
    std::process::exit(netac::cli::main_with_args(std::env::args_os()));
}
