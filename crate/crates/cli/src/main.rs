fn main() {
    std::process::exit(gatgan_cli::main_with_args(std::env::args_os()));
}
