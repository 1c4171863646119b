fn main() {
    std::process::exit(pseaec::cli::main_with_args(std::env::args_os().collect()));
}
